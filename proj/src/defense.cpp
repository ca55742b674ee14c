#include "metapriv/defense.hpp"

#include <algorithm>
#include <stdexcept>

namespace metapriv {

void NoiseSpec::validate() const {
    if (sigma < 0.0) throw std::invalid_argument("noise spec: sigma must be non-negative");
}

const char* noise_site_name(NoiseSite site) {
    switch (site) {
        case NoiseSite::None: return "none";
        case NoiseSite::SupportData: return "support_data";
        case NoiseSite::AdaptationGradient: return "adaptation_gradient";
        case NoiseSite::QueryData: return "query_data";
        case NoiseSite::ValidationGradient: return "validation_gradient";
    }
    return "none";
}

NoiseSite noise_site_from_name(const std::string& name) {
    if (name == "none") return NoiseSite::None;
    if (name == "support_data") return NoiseSite::SupportData;
    if (name == "adaptation_gradient") return NoiseSite::AdaptationGradient;
    if (name == "query_data") return NoiseSite::QueryData;
    if (name == "validation_gradient") return NoiseSite::ValidationGradient;
    throw std::invalid_argument("unknown noise site: " + name);
}

Tensor perturb_images(const Tensor& images, const NoiseSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.mu == 0.0 && spec.sigma == 0.0) return images;
    Tensor out(images.shape());
    for (std::int64_t i = 0; i < images.size(); ++i)
        out[i] = std::clamp(images[i] + rng.normal(spec.mu, spec.sigma), 0.0, 1.0);
    return out;
}

GradientVector perturb_gradient(const GradientVector& g, const NoiseSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.mu == 0.0 && spec.sigma == 0.0) return g;
    GradientVector out;
    for (const auto& e : g.params) {
        Tensor t(e.tensor.shape());
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = e.tensor[i] + rng.normal(spec.mu, spec.sigma);
        out.params.push_back({e.name, std::move(t)});
    }
    return out;
}

TaskPipelineTrace noisy_task_trace(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg,
                                   const NoiseSpec& spec, Rng& rng) {
    cfg.validate();
    spec.validate();
    TaskPipelineTrace trace;

    LabeledBatch support = task.support;
    if (spec.site == NoiseSite::SupportData) support.inputs = perturb_images(support.inputs, spec, rng);
    trace.support_inputs = support.inputs;

    ParamVector theta = omega;
    for (int s = 0; s < cfg.inner_steps; ++s) {
        GradientVector gs = grad(theta, support);
        if (spec.site == NoiseSite::AdaptationGradient) gs = perturb_gradient(gs, spec, rng);
        theta = axpy(theta, -cfg.alpha_inner, gs);
    }
    trace.theta = theta;

    LabeledBatch query = task.query;
    if (spec.site == NoiseSite::QueryData) query.inputs = perturb_images(query.inputs, spec, rng);
    trace.query_inputs = query.inputs;

    MamlGradient mg;
    if (cfg.order == GradOrder::Second) {
        GradientVector gq = grad(theta, query);
        if (cfg.alpha_inner == 0.0) {
            mg = {std::move(gq), GradOrder::Second, 0};
        } else {
            const GradientVector hv = hvp(omega, support, gq);
            mg = {axpy(gq, -cfg.alpha_inner, hv), GradOrder::Second, 0};
        }
    } else {
        mg = {grad(theta, query), GradOrder::First, 0};
    }
    if (spec.site == NoiseSite::ValidationGradient) mg.g = perturb_gradient(mg.g, spec, rng);

    trace.g = std::move(mg);
    return trace;
}

MamlGradient noisy_task_grad(const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg,
                             const NoiseSpec& spec, Rng& rng) {
    return noisy_task_trace(task, omega, cfg, spec, rng).g;
}

TaskGradFn make_noisy_task_fn(const NoiseSpec& spec) {
    return [spec](const TaskBatch& task, const ParamVector& omega, const TrainConfig& cfg, Rng& rng) {
        return noisy_task_grad(task, omega, cfg, spec, rng);
    };
}

}  // namespace metapriv
