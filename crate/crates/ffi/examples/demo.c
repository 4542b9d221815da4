/* Minimal C consumer of the fedcot engine.
 *
 * Build (from the workspace root):
 *   cargo build --release -p fedcot-ffi
 *   cc crates/ffi/examples/demo.c -Icrates/ffi/include \
 *      target/release/libfedcot_ffi.a -lpthread -ldl -lm -o demo
 */
#include <stdio.h>
#include <stdlib.h>

#include "fedcot.h"

static const char *CONFIG =
    "seed = 7\n"
    "ranks = [2, 4]\n"
    "feature_dim = 32\n"
    "hidden_dim = 16\n"
    "rounds = 2\n"
    "[synth]\n"
    "num_clients = 2\n"
    "questions_per_client = 40\n"
    "test_questions_per_client = 20\n"
    "signal_dim = 4\n";

static void check(FedcotStatus status, const char *what) {
    if (status != FedcotStatus_Ok) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)status,
                fedcot_last_error_message());
        exit(1);
    }
}

int main(void) {
    printf("fedcot %s\n", fedcot_version());

    FedcotSimulation *sim = NULL;
    check(fedcot_simulation_new(CONFIG, &sim), "new");
    check(fedcot_simulation_run(sim), "run");

    uint32_t rounds = 0, clients = 0;
    check(fedcot_simulation_rounds(sim, &rounds), "rounds");
    check(fedcot_simulation_clients(sim, &clients), "clients");
    printf("completed %u rounds over %u clients\n", rounds, clients);

    for (uint32_t c = 0; c < clients; c++) {
        double accuracy = 0.0, p1 = 0.0, pk = 0.0;
        check(fedcot_simulation_metric(sim, rounds, c, FedcotMetric_Accuracy, &accuracy),
              "metric");
        check(fedcot_simulation_metric(sim, rounds, c, FedcotMetric_PAt1, &p1), "metric");
        check(fedcot_simulation_metric(sim, rounds, c, FedcotMetric_PAtK, &pk), "metric");
        printf("client %u: accuracy %.4f (p@1 %.4f, p@k %.4f)\n", c, accuracy, p1, pk);
    }

    const char *options[] = {"A", "B", "C", "D"};
    char *answer = NULL;
    check(fedcot_extract_answer("step by step...\n#### B. The second option",
                                options, 4, &answer),
          "extract");
    printf("extracted answer: %s\n", answer ? answer : "(abstain)");
    fedcot_string_free(answer);

    fedcot_simulation_free(sim);
    return 0;
}
