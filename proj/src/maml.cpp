#include "metapriv/maml.hpp"

#include <stdexcept>

namespace metapriv {

void TrainConfig::validate() const {
    if (alpha_inner < 0.0) throw std::invalid_argument("train config: alpha_inner must be non-negative");
    if (beta_meta < 0.0) throw std::invalid_argument("train config: beta_meta must be non-negative");
    if (inner_steps < 1) throw std::invalid_argument("train config: inner_steps must be at least 1");
    if (tasks_per_step < 1) throw std::invalid_argument("train config: tasks_per_step must be at least 1");
    if (epochs < 0) throw std::invalid_argument("train config: epochs must be non-negative");
    if (meta_steps_per_epoch < 1) throw std::invalid_argument("train config: meta_steps_per_epoch must be at least 1");
    if (order == GradOrder::Second && inner_steps != 1)
        throw std::invalid_argument("train config: the second-order gradient is defined for a single inner step");
}

AdaptedParams adapt(const ParamVector& omega, const LabeledBatch& support, double alpha, int steps) {
    if (steps < 1) throw std::invalid_argument("adapt: steps must be at least 1");
    ParamVector theta = omega;
    for (int s = 0; s < steps; ++s) theta = axpy(theta, -alpha, grad(theta, support));
    return {std::move(theta), alpha, steps};
}

MamlGradient validation_grad_first(const ParamVector& theta, const LabeledBatch& query) {
    return {grad(theta, query), GradOrder::First, 0};
}

MamlGradient validation_grad_second(const ParamVector& omega, const LabeledBatch& support, const LabeledBatch& query,
                                    double alpha) {
    const ParamVector theta = adapt(omega, support, alpha, 1).theta;
    GradientVector gq = grad(theta, query);
    if (alpha == 0.0) return {std::move(gq), GradOrder::Second, 0};
    const GradientVector hv = hvp(omega, support, gq);
    return {axpy(gq, -alpha, hv), GradOrder::Second, 0};
}

ParamVector meta_update(const ParamVector& omega, const std::vector<MamlGradient>& grads, double beta) {
    if (grads.empty()) throw std::invalid_argument("meta_update: no gradients");
    GradientVector sum = grads[0].g;
    if (!omega.same_schema(sum)) throw std::invalid_argument("meta_update: gradient schema mismatch");
    for (std::size_t i = 1; i < grads.size(); ++i) sum = axpy(sum, 1.0, grads[i].g);
    return axpy(omega, -beta / static_cast<double>(grads.size()), sum);
}

double meta_test_accuracy(const ParamVector& omega, const Dataset& data, const FewShotSpec& spec, double alpha,
                          int inner_steps, int num_tasks, std::uint64_t seed) {
    if (num_tasks < 1) throw std::invalid_argument("meta_test_accuracy: need at least one task");
    std::int64_t correct = 0, total = 0;
    for (int t = 0; t < num_tasks; ++t) {
        Rng rng(derive_seed(seed, 0x7e57, static_cast<std::uint64_t>(t)));
        const TaskBatch task = sample_task(data, spec, rng);
        const ParamVector theta = adapt(omega, task.support, alpha, inner_steps).theta;
        const Tensor logits = forward(theta, task.query.inputs);
        for (int r = 0; r < logits.rows(); ++r) {
            int best = 0;
            for (int c = 1; c < logits.cols(); ++c)
                if (logits.at(r, c) > logits.at(r, best)) best = c;
            correct += best == task.query.labels[static_cast<std::size_t>(r)];
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

MamlGradient undefended_task_grad(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg) {
    if (cfg.order == GradOrder::Second) return validation_grad_second(omega, task.support, task.query, cfg.alpha_inner);
    const AdaptedParams ad = adapt(omega, task.support, cfg.alpha_inner, cfg.inner_steps);
    return validation_grad_first(ad.theta, task.query);
}

TrainResult train_run(const Architecture& arch, const TrainConfig& cfg, const Dataset& data, const FewShotSpec& spec,
                      std::uint64_t seed, const TaskGradFn& task_fn) {
    cfg.validate();
    TrainResult res;
    res.state.omega = init_params(arch, derive_seed(seed, 0x1717));
    res.state.t = 0;
    res.checkpoints.push_back(res.state.omega);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int step = 0; step < cfg.meta_steps_per_epoch; ++step) {
            std::vector<MamlGradient> grads;
            grads.reserve(static_cast<std::size_t>(cfg.tasks_per_step));
            for (int i = 0; i < cfg.tasks_per_step; ++i) {
                Rng rng(derive_seed(seed, static_cast<std::uint64_t>(res.state.t) + 1, static_cast<std::uint64_t>(i)));
                TaskBatch task = sample_task(data, spec, rng);
                MamlGradient g = task_fn ? task_fn(task, res.state.omega, cfg, rng)
                                         : undefended_task_grad(task, res.state.omega, cfg);
                g.source_task = i;
                grads.push_back(std::move(g));
            }
            res.state.omega = meta_update(res.state.omega, grads, cfg.beta_meta);
            ++res.state.t;
        }
        res.checkpoints.push_back(res.state.omega);
    }
    return res;
}

}  // namespace metapriv
