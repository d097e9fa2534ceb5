#include <stdio.h>
#include <string.h>

#include "cdt.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        return 10;
    }
    CdtModel *model = NULL;
    if (cdt_model_load("/nonexistent/model.ckpt", &model) != CDT_STATUS_IO || model != NULL) {
        return 11;
    }
    const char *err = cdt_last_error();
    if (err == NULL || strstr(err, "nonexistent") == NULL) {
        return 12;
    }
    if (cdt_model_load(argv[1], &model) != CDT_STATUS_OK || cdt_last_error() != NULL) {
        return 13;
    }
    size_t dim = 0;
    bool deep = true;
    if (cdt_model_info(model, &dim, &deep) != CDT_STATUS_OK || dim == 0 || deep) {
        return 14;
    }
    size_t cols[2] = {0, 1};
    double vals[2] = {1.0, 1.0};
    double score = 0.0;
    if (cdt_model_score(model, cols, vals, 2, 1, &score) != CDT_STATUS_OK) {
        return 15;
    }
    printf("%.17g\n", score);
    cdt_model_free(model);
    return 0;
}
