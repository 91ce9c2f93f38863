/* Reads an instance file, proves lambda <= 0, verifies the witness and
 * checks that an impossible threshold is rejected. Exit 0 on success. */
#include <stdio.h>
#include <string.h>

#include "clh.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    fseek(f, 0, SEEK_SET);
    char *buf = malloc((size_t)n + 1);
    if (fread(buf, 1, (size_t)n, f) != (size_t)n) { fclose(f); free(buf); return NULL; }
    buf[n] = '\0';
    fclose(f);
    return buf;
}

#define CHECK(cond, msg) do { if (!(cond)) { fprintf(stderr, "FAIL: %s\n", msg); return 1; } } while (0)

int main(int argc, char **argv) {
    CHECK(argc == 2, "usage: smoke INSTANCE");
    char *text = slurp(argv[1]);
    CHECK(text != NULL, "cannot read instance");

    ClhInstance *inst = NULL;
    CHECK(clh_instance_parse(text, &inst) == CLH_STATUS_OK, "parse");
    free(text);
    CHECK(clh_instance_check_commuting(inst) == CLH_STATUS_OK, "commuting");

    double lambda = 1.0;
    CHECK(clh_oracle_ground_energy(inst, &lambda) == CLH_STATUS_OK, "oracle");
    CHECK(lambda > -1e-9 && lambda < 1e-9, "toric ground energy is 0");

    ClhWitness *w = NULL;
    CHECK(clh_prove(inst, 0.0, false, 0, &w) == CLH_STATUS_OK && w != NULL, "prove");
    char *report = NULL;
    CHECK(clh_verify(inst, w, &report) == CLH_STATUS_OK, "verify");
    CHECK(strstr(report, "\"accept\":true") != NULL, "report says accept");
    clh_string_free(report);
    clh_witness_free(w);

    w = NULL;
    CHECK(clh_prove(inst, -0.5, false, 0, &w) == CLH_STATUS_REJECTED && w == NULL, "unsat");

    ClhInstance *bad = NULL;
    CHECK(clh_instance_parse("{", &bad) == CLH_STATUS_PARSE_ERROR && bad == NULL, "bad json");
    char *msg = clh_last_error();
    CHECK(msg != NULL && strlen(msg) > 0, "error message");
    clh_string_free(msg);

    clh_instance_free(inst);
    printf("ok %s\n", clh_version());
    return 0;
}
