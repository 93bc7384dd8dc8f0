// Walks through one under-represented population: the recovery conditions,
// the constrained solver, and a finite-sample run of each intervention.

#include <iostream>

#include "biased_erm/biased_erm.hpp"

using namespace biased_erm;

int main() {
    const TrueModel model{1.0 / 3.0, 0.5, 0.2};
    const BiasParams bias = BiasParams::under_representation(0.2);

    const auto cond = check_conditions(model, bias);
    std::cout << "cond_neg " << shortest(cond.cond_neg) << ", cond_pos " << shortest(cond.cond_pos) << '\n';

    const auto rep = exact_constrained_erm(model, bias);
    std::cout << "equal-opportunity ERM picks " << candidate_name(rep.chosen_class) << " (true error "
              << shortest(rep.true_error) << ")\n";

    const auto plain = unconstrained_optimum(region_masses(model, bias), model.p);
    std::cout << "plain ERM picks " << candidate_name(classify(plain.params, model.p)) << " with p1B "
              << shortest(plain.params.p1B) << '\n';

    ExperimentConfig cfg;
    cfg.model = model;
    cfg.bias = bias;
    cfg.n_train = 50000;
    cfg.n_reps = 10;
    for (const auto& iv : {Intervention::none(), Intervention::constrained(Fairness::EqualOpportunity, 0.01),
                           Intervention{InterventionKind::ReweightUnderrep, {}}}) {
        cfg.intervention = iv;
        const auto res = run_experiment(cfg);
        std::cout << intervention_name(iv.kind) << ": recovery rate " << shortest(res.recovery_rate)
                  << ", mean true error " << shortest(res.mean_true_error) << '\n';
    }
}
