#pragma once

#include "metapriv/maml.hpp"

namespace metapriv {

// Where Gaussian noise enters the per-task pipeline.
enum class NoiseSite {
    None,
    SupportData,         // support pixels, clamped back to [0,1]
    AdaptationGradient,  // inner-loop gradient, unclamped
    QueryData,           // query pixels, clamped back to [0,1]
    ValidationGradient,  // shared gradient, unclamped
};

struct NoiseSpec {
    NoiseSite site = NoiseSite::None;
    double mu = 0.0;
    double sigma = 0.0;

    void validate() const;  // sigma must be non-negative
    bool active() const { return site != NoiseSite::None && (mu != 0.0 || sigma != 0.0); }
};

const char* noise_site_name(NoiseSite site);
NoiseSite noise_site_from_name(const std::string& name);

// Adds elementwise Gaussian noise. The image overload clamps to [0,1]; the
// gradient overload does not. mu == sigma == 0 returns the input bitwise
// without consuming random draws.
Tensor perturb_images(const Tensor& images, const NoiseSpec& spec, Rng& rng);
GradientVector perturb_gradient(const GradientVector& g, const NoiseSpec& spec, Rng& rng);

// Support -> adapt -> query -> validation gradient with noise injected at
// spec.site only; every other stage is bitwise identical to the undefended
// pipeline. With an inactive spec the result equals undefended_task_grad.
MamlGradient noisy_task_grad(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg,
                             const NoiseSpec& spec, Rng& rng);

// Adapter for train_run.
TaskGradFn make_noisy_task_fn(const NoiseSpec& spec);

// Intermediate stages, exposed so tests can pin down site isolation.
struct TaskPipelineTrace {
    Tensor support_inputs;
    Tensor query_inputs;
    ParamVector theta;
    MamlGradient g;
};

TaskPipelineTrace noisy_task_trace(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg,
                                   const NoiseSpec& spec, Rng& rng);

}  // namespace metapriv
