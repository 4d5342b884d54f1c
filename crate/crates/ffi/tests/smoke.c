#include <stdio.h>
#include <string.h>
#include "openadopt.h"

int main(void) {
    const char *csv =
        "model_id,organization,total_params,release_date\n"
        "Qwen/Qwen3.5-4B,Qwen,4B,2026-03-02\n";
    OaRegistry *reg = NULL;
    if (oa_registry_from_csv(csv, &reg) != OA_STATUS_OK) return 1;
    OaSizeBucket b;
    if (oa_registry_bucket(reg, "Qwen/Qwen3.5-4B", &b) != OA_STATUS_OK || b != OA_SIZE_BUCKET_B1_TO5) return 2;
    oa_registry_free(reg);

    double score = 0;
    if (oa_ram_score(166000.0, 48000.0, &score) != OA_STATUS_OK) return 3;
    if (oa_ram_score(1.0, 0.0, &score) != OA_STATUS_RAM) return 4;
    char msg[128];
    oa_last_error_message(msg, sizeof msg);
    if (strstr(msg, "positive") == NULL) return 5;
    printf("%.2f\n", score);
    return 0;
}
