#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "metapriv/fewshot.hpp"
#include "metapriv/network.hpp"

namespace metapriv {

enum class GradOrder { First, Second };

struct MetaState {
    ParamVector omega;
    std::int64_t t = 0;  // meta steps taken
};

struct TrainConfig {
    // Small inner step: the shared gradient stays close to the plain query
    // gradient at omega, which both attacks and stable desk training rely on.
    double alpha_inner = 0.15;
    double beta_meta = 0.1;
    int inner_steps = 1;
    int tasks_per_step = 4;
    int epochs = 1;
    int meta_steps_per_epoch = 25;
    GradOrder order = GradOrder::Second;

    void validate() const;  // second order requires inner_steps == 1
};

struct AdaptedParams {
    ParamVector theta;
    double alpha_inner = 0.0;
    int steps = 0;
};

struct MamlGradient {
    GradientVector g;
    GradOrder order = GradOrder::Second;
    int source_task = 0;
};

// Inner loop: repeated full-batch descent on the support loss.
AdaptedParams adapt(const ParamVector& omega, const LabeledBatch& support, double alpha, int steps);

// Shared gradient, first-order variant: the query-loss gradient at the
// adapted parameters, adaptation treated as a constant.
MamlGradient validation_grad_first(const ParamVector& theta, const LabeledBatch& query);

// Shared gradient, second-order variant for one inner step:
//   g = g_q - alpha * H_support(omega) * g_q,
// i.e. the query gradient pulled back through theta = omega - alpha*grad_s.
MamlGradient validation_grad_second(const ParamVector& omega, const LabeledBatch& support,
                                    const LabeledBatch& query, double alpha);

// omega' = omega - beta * mean(gradients).
ParamVector meta_update(const ParamVector& omega, const std::vector<MamlGradient>& grads, double beta);

// Fraction of query examples classified correctly after per-task adaptation.
double meta_test_accuracy(const ParamVector& omega, const Dataset& data, const FewShotSpec& spec, double alpha,
                          int inner_steps, int num_tasks, std::uint64_t seed);

// Per-task pipeline hook; the defense module substitutes a noisy variant.
using TaskGradFn =
    std::function<MamlGradient(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg, Rng& rng)>;

MamlGradient undefended_task_grad(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg);

struct TrainResult {
    MetaState state;
    std::vector<ParamVector> checkpoints;  // [0] = initial, then one per epoch
};

TrainResult train_run(const Architecture& arch, const TrainConfig& cfg, const Dataset& data, const FewShotSpec& spec,
                      std::uint64_t seed, const TaskGradFn& task_fn = {});

}  // namespace metapriv
