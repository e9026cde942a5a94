#include <stdio.h>
#include "lcbp.h"
int main(void) {
  LcbpGraph *g = NULL; LcbpResult *a = NULL, *b = NULL; double err = -1;
  if (lcbp_gen_regular(16, 3, 0.5, 2.0, false, 1, &g) != LCBP_STATUS_OK) return 1;
  LcbpRunOptions o = lcbp_run_options_default();
  if (lcbp_run(g, LCBP_METHOD_LCBP, &o, &a) != LCBP_STATUS_OK) return 2;
  if (lcbp_exact(g, &b) != LCBP_STATUS_OK) return 3;
  lcbp_max_linf_error(a, b, &err);
  printf("converged=%d err=%.3e\n", lcbp_result_converged(a), err);
  if (lcbp_gen_regular(10, 2, 0.5, 2.0, false, 0, &g) != LCBP_STATUS_INVALID_ARGUMENT) return 4;
  printf("last error: %s\n", lcbp_last_error());
  lcbp_result_free(a); lcbp_result_free(b); lcbp_graph_free(g);
  return 0;
}
