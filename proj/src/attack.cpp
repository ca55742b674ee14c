#include "metapriv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace metapriv {

void AttackConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("attack config: iterations must be non-negative");
    if (step_size <= 0.0) throw std::invalid_argument("attack config: step_size must be positive");
    if (tv_weight < 0.0) throw std::invalid_argument("attack config: tv_weight must be non-negative");
    if (batch_slots < 0) throw std::invalid_argument("attack config: batch_slots must be non-negative");
}

double total_variation(const Tensor& img) {
    if (img.rank() == 2) {
        const int h = img.shape()[0], w = img.shape()[1];
        if (h < 2 || w < 2) throw std::invalid_argument("total_variation: image too small " + img.shape_str());
        double tv = 0.0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j + 1 < w; ++j) tv += std::fabs(img[i * w + j + 1] - img[i * w + j]);
        for (int i = 0; i + 1 < h; ++i)
            for (int j = 0; j < w; ++j) tv += std::fabs(img[(i + 1) * w + j] - img[i * w + j]);
        return tv;
    }
    if (img.rank() == 3) {
        const int b = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
        double tv = 0.0;
        for (int k = 0; k < b; ++k) {
            Tensor one({h, w}, std::vector<double>(img.data().begin() + static_cast<std::ptrdiff_t>(k) * h * w,
                                                   img.data().begin() + static_cast<std::ptrdiff_t>(k + 1) * h * w));
            tv += total_variation(one);
        }
        return tv;
    }
    throw std::invalid_argument("total_variation: expected an image or image stack, got " + img.shape_str());
}

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;  // unit dynamic range
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr int kSsimWindow = 7;

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || !a.same_shape(b))
        throw std::invalid_argument("ssim: need two equal-shape images, got " + a.shape_str() + " and " + b.shape_str());
    const int h = a.shape()[0], w = a.shape()[1];
    if (h < kSsimWindow || w < kSsimWindow) throw std::invalid_argument("ssim: image smaller than the 7x7 window");
    const double inv = 1.0 / (kSsimWindow * kSsimWindow);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i + kSsimWindow <= h; ++i)
        for (int j = 0; j + kSsimWindow <= w; ++j) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int u = 0; u < kSsimWindow; ++u)
                for (int v = 0; v < kSsimWindow; ++v) {
                    const double x = a[(i + u) * w + (j + v)];
                    const double y = b[(i + u) * w + (j + v)];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            const double mx = sx * inv, my = sy * inv;
            const double vx = sxx * inv - mx * mx;
            const double vy = syy * inv - my * my;
            const double cov = sxy * inv - mx * my;
            total += ((2 * mx * my + kSsimC1) * (2 * cov + kSsimC2)) /
                     ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
            ++count;
        }
    return total / count;
}

namespace {

ad::NodePtr tv_graph(const ad::NodePtr& x, int h, int w) {
    return ad::add(ad::sum_all(ad::abs(ad::img_dx(x, h, w))), ad::sum_all(ad::abs(ad::img_dy(x, h, w))));
}

Tensor slot_image(const Tensor& batch, int slot) {
    Tensor img({kImageSide, kImageSide});
    for (int j = 0; j < kImagePixels; ++j) img[j] = batch.at(slot, j);
    return img;
}

using ObjBuilder = std::function<ad::NodePtr(const ad::NodePtr& x)>;

// Adaptive-moment gradient descent on the candidate pixels, projected back to
// [0,1] after every step.
//
// The query path matches an approximate gradient target, so constant steps
// keep bouncing around the basin and erode whatever structure the batch
// started with; it shrinks the step linearly and keeps the best iterate seen
// rather than the last, so trajectory[k] is the best objective through
// iterate k (non-increasing by construction) and x_star is that incumbent.
// The support path matches an exactly emulated gradient and converges better
// with full-size steps and last-iterate semantics, so `keep_best` stays off
// there and its trajectory logs each iterate as visited.
ReconResult optimize_pixels(const Tensor& prior, const std::vector<int>& slot_labels, int target_slot,
                            const AttackConfig& cfg, bool keep_best, const ObjBuilder& build) {
    cfg.validate();
    const int slots = static_cast<int>(slot_labels.size());
    if (slots < 1) throw std::invalid_argument("reconstruct: need at least one slot");
    if (cfg.batch_slots != 0 && cfg.batch_slots != slots)
        throw std::invalid_argument("reconstruct: batch_slots does not match the slot labels");
    if (target_slot < 0 || target_slot >= slots) throw std::invalid_argument("reconstruct: target slot out of range");
    if (prior.rank() != 2 || prior.shape()[0] != kImageSide || prior.shape()[1] != kImageSide)
        throw std::invalid_argument("reconstruct: prior must be a 28x28 image");

    Tensor x({slots, kImagePixels});
    Rng rng(derive_seed(cfg.seed, 0x5eed));
    for (int s = 0; s < slots; ++s)
        for (int j = 0; j < kImagePixels; ++j) x.at(s, j) = s == target_slot ? prior[j] : rng.uniform();

    std::vector<double> m(static_cast<std::size_t>(x.size()), 0.0);
    std::vector<double> v(static_cast<std::size_t>(x.size()), 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    Tensor best = x;
    double best_obj = std::numeric_limits<double>::infinity();

    ReconResult res;
    for (int it = 0; it < cfg.iterations; ++it) {
        auto xa = ad::variable(x);
        auto obj = build(xa);
        require_finite(obj->value, "reconstruction objective");
        const double cur = obj->value[0];
        if (cur < best_obj) {
            best_obj = cur;
            best = x;
        }
        res.trajectory.push_back(keep_best ? best_obj : cur);

        auto grads = ad::backward(obj);
        const Tensor gx = ad::grad_value(grads, xa);
        const double corr1 = 1.0 - std::pow(b1, it + 1);
        const double corr2 = 1.0 - std::pow(b2, it + 1);
        const double lr = keep_best ? cfg.step_size * (1.0 - static_cast<double>(it) / cfg.iterations) : cfg.step_size;
        for (std::int64_t i = 0; i < x.size(); ++i) {
            m[static_cast<std::size_t>(i)] = b1 * m[static_cast<std::size_t>(i)] + (1 - b1) * gx[i];
            v[static_cast<std::size_t>(i)] = b2 * v[static_cast<std::size_t>(i)] + (1 - b2) * gx[i] * gx[i];
            const double mh = m[static_cast<std::size_t>(i)] / corr1;
            const double vh = v[static_cast<std::size_t>(i)] / corr2;
            x[i] = std::clamp(x[i] - lr * mh / (std::sqrt(vh) + eps), 0.0, 1.0);
        }
    }

    auto final_obj = build(ad::constant(x));
    require_finite(final_obj->value, "reconstruction objective");
    const double fin = final_obj->value[0];
    if (fin < best_obj) {
        best_obj = fin;
        best = x;
    }
    if (keep_best) {
        res.trajectory.push_back(best_obj);
        res.final_objective = best_obj;
        res.x_star = std::move(best);
    } else {
        res.trajectory.push_back(fin);
        res.final_objective = fin;
        res.x_star = std::move(x);
    }
    res.iterations_run = cfg.iterations;
    res.recovered = slot_image(res.x_star, target_slot);
    res.ssim_to_prior = ssim(prior, res.recovered);
    return res;
}

std::vector<ad::NodePtr> gradient_constants(const GradientVector& g) {
    if (param_norm(g) == 0.0) throw std::invalid_argument("reconstruct: shared gradient is all zero");
    return param_constants(g);
}

}  // namespace

ReconResult reconstruct_query(const GradientVector& g, const ParamVector& omega, const Tensor& prior,
                              const std::vector<int>& slot_labels, int target_slot, const AttackConfig& cfg) {
    auto gconst = gradient_constants(g);
    auto wl = param_leaves(omega);
    const auto builder = [&](const ad::NodePtr& xa) {
        auto loss = ce_graph(logits_graph(wl, xa), slot_labels);
        auto gw = grad_nodes(loss, wl);
        auto cos = cosine_graph(gw, gconst);
        auto obj = ad::sub(ad::constant(Tensor::scalar(1.0)), cos);
        if (cfg.tv_weight != 0.0) obj = ad::add(obj, ad::scale(tv_graph(xa, kImageSide, kImageSide), cfg.tv_weight));
        return obj;
    };
    return optimize_pixels(prior, slot_labels, target_slot, cfg, true, builder);
}

ReconResult reconstruct_support(const GradientVector& g, const ParamVector& omega, const LabeledBatch& query,
                                const Tensor& prior, const std::vector<int>& slot_labels, int target_slot,
                                double alpha_inner, const AttackConfig& cfg) {
    auto gconst = gradient_constants(g);
    auto wl = param_leaves(omega);
    auto qx = ad::constant(query.inputs);
    const auto builder = [&](const ad::NodePtr& xa) {
        auto support_loss = ce_graph(logits_graph(wl, xa), slot_labels);
        auto gs = grad_nodes(support_loss, wl);
        std::vector<ad::NodePtr> theta;
        theta.reserve(wl.size());
        for (std::size_t i = 0; i < wl.size(); ++i) theta.push_back(ad::sub(wl[i], ad::scale(gs[i], alpha_inner)));
        auto query_loss = ce_graph(logits_graph(theta, qx), query.labels);
        auto gq = grad_nodes(query_loss, wl);
        auto cos = cosine_graph(gq, gconst);
        auto obj = ad::sub(ad::constant(Tensor::scalar(1.0)), cos);
        if (cfg.tv_weight != 0.0) obj = ad::add(obj, ad::scale(tv_graph(xa, kImageSide, kImageSide), cfg.tv_weight));
        return obj;
    };
    return optimize_pixels(prior, slot_labels, target_slot, cfg, false, builder);
}

bool decide_membership(const Tensor& prior, const Tensor& reconstructed, double threshold) {
    return ssim(prior, reconstructed) >= threshold;
}

double calibrate_threshold(const std::vector<double>& member_scores, const std::vector<double>& non_member_scores) {
    if (member_scores.empty() || non_member_scores.empty())
        throw std::invalid_argument("calibrate_threshold: need scores from both populations");
    std::set<double> distinct(member_scores.begin(), member_scores.end());
    distinct.insert(non_member_scores.begin(), non_member_scores.end());
    const std::vector<double> s(distinct.begin(), distinct.end());
    if (s.size() == 1) return s[0];

    const auto balanced = [&](double cutoff, bool none) {
        int tp = 0, tn = 0;
        for (double x : member_scores) tp += !none && x >= cutoff;
        for (double x : non_member_scores) tn += none || x < cutoff;
        return 0.5 * (static_cast<double>(tp) / member_scores.size() + static_cast<double>(tn) / non_member_scores.size());
    };

    double best = balanced(0.0, true);  // no member calls at all
    for (double cut : s) best = std::max(best, balanced(cut, false));

    if (best <= 0.5 + 1e-12) return 0.5 * (s.front() + s.back());

    // Only cutoffs at some s[j], j >= 1 can beat 0.5; the feasible threshold
    // interval for that cutoff is (s[j-1], s[j]].
    double best_width = -1.0, pick = 0.0;
    for (std::size_t j = 1; j < s.size(); ++j) {
        if (balanced(s[j], false) < best - 1e-12) continue;
        const double width = s[j] - s[j - 1];
        if (width > best_width + 1e-15) {
            best_width = width;
            pick = 0.5 * (s[j - 1] + s[j]);
        }
    }
    return pick;
}

const char* target_set_name(TargetSet t) { return t == TargetSet::Query ? "query" : "support"; }

namespace {

struct TrialPhases {
    std::uint64_t shuffle;
    std::uint64_t trial;
    std::uint64_t noise;
    std::uint64_t attack;
};

double reconstruction_score(const GameSetup& setup, const TaskBatch& task, const GradientVector& g,
                            const Tensor& prior, int prior_class, std::uint64_t atk_seed) {
    const LabeledBatch& designated = setup.target == TargetSet::Query ? task.query : task.support;
    // Slot whose label matches the prior's class within this task; same-class
    // slots are interchangeable under the objective, so the first one serves.
    int slot = 0;
    const auto it = std::find(task.classes.begin(), task.classes.end(), prior_class);
    if (it != task.classes.end()) {
        const int want = static_cast<int>(it - task.classes.begin());
        const auto pos = std::find(designated.labels.begin(), designated.labels.end(), want);
        if (pos != designated.labels.end()) slot = static_cast<int>(pos - designated.labels.begin());
    }
    AttackConfig cfg = setup.attack;
    cfg.seed = atk_seed;
    if (setup.target == TargetSet::Query)
        return reconstruct_query(g, setup.omega, prior, designated.labels, slot, cfg).ssim_to_prior;
    return reconstruct_support(g, setup.omega, task.query, prior, designated.labels, slot, setup.engine.alpha_inner,
                               cfg).ssim_to_prior;
}

GameRun run_trials(const GameSetup& setup, int n, const TrialPhases& ph) {
    if (setup.data == nullptr) throw std::invalid_argument("membership game: no dataset");
    if (n <= 0 || n % 2 != 0) throw std::invalid_argument("membership game: trial count must be even and positive");
    if (setup.num_learners < 1) throw std::invalid_argument("membership game: need at least one learner");
    setup.engine.validate();
    setup.noise.validate();

    std::vector<int> truth(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n / 2; ++i) truth[static_cast<std::size_t>(i)] = 1;
    Rng shuffler(derive_seed(setup.seed, ph.shuffle));
    shuffler.shuffle(truth);

    GameRun run;
    for (int trial = 0; trial < n; ++trial) {
        const bool b = truth[static_cast<std::size_t>(trial)] == 1;
        Rng tr(derive_seed(setup.seed, ph.trial, static_cast<std::uint64_t>(trial)));

        std::vector<TaskBatch> tasks;
        tasks.reserve(static_cast<std::size_t>(setup.num_learners));
        for (int l = 0; l < setup.num_learners; ++l) tasks.push_back(sample_task(*setup.data, setup.spec, tr));
        const int a = setup.scope == GameScope::Global ? tr.uniform_int(setup.num_learners) : 0;
        const TaskBatch& chosen = tasks[static_cast<std::size_t>(a)];

        const std::vector<int>& ids = setup.target == TargetSet::Query ? chosen.query_ids : chosen.support_ids;
        const LabeledBatch& designated = setup.target == TargetSet::Query ? chosen.query : chosen.support;
        const int pos = tr.uniform_int(static_cast<int>(ids.size()));
        int prior_class;
        Tensor prior;
        if (b) {
            prior = setup.data->examples[static_cast<std::size_t>(ids[static_cast<std::size_t>(pos)])].pixels;
            prior_class = chosen.classes[static_cast<std::size_t>(designated.labels[static_cast<std::size_t>(pos)])];
        } else {
            prior_class = chosen.classes[static_cast<std::size_t>(designated.labels[static_cast<std::size_t>(pos)])];
            std::vector<int> excluded = chosen.support_ids;
            excluded.insert(excluded.end(), chosen.query_ids.begin(), chosen.query_ids.end());
            const int id = sample_example_excluding(*setup.data, prior_class, excluded, tr);
            prior = setup.data->examples[static_cast<std::size_t>(id)].pixels;
        }

        std::vector<GradientVector> grads;
        grads.reserve(tasks.size());
        for (int l = 0; l < setup.num_learners; ++l) {
            Rng nr(derive_seed(setup.seed, ph.noise, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(l)));
            grads.push_back(noisy_task_grad(tasks[static_cast<std::size_t>(l)], setup.omega, setup.engine, setup.noise, nr).g);
        }

        TrialRecord rec;
        rec.trial = trial;
        rec.member_truth = b;
        rec.learner = a;
        rec.guessed_learner = a;
        if (setup.decision_override) {
            rec.decided_member = setup.decision_override(trial, b);
            rec.score = rec.decided_member ? 1.0 : 0.0;
        } else if (setup.scope == GameScope::Local) {
            rec.score = reconstruction_score(setup, chosen, grads[static_cast<std::size_t>(a)], prior, prior_class,
                                             derive_seed(setup.seed, ph.attack, static_cast<std::uint64_t>(trial)));
            rec.decided_member = rec.score >= setup.attack.threshold;
        } else {
            double bestScore = 0.0;
            int bestL = 0;
            for (int l = 0; l < setup.num_learners; ++l) {
                const double sc = reconstruction_score(
                    setup, tasks[static_cast<std::size_t>(l)], grads[static_cast<std::size_t>(l)], prior, prior_class,
                    derive_seed(setup.seed, ph.attack, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(l)));
                if (l == 0 || sc > bestScore) {
                    bestScore = sc;
                    bestL = l;
                }
            }
            rec.score = bestScore;
            rec.guessed_learner = bestL;
            rec.decided_member = rec.score >= setup.attack.threshold;
        }

        const bool named_right = setup.scope == GameScope::Local || rec.guessed_learner == a;
        if (b) {
            if (rec.decided_member && named_right)
                ++run.result.tp;
            else
                ++run.result.fn;
        } else {
            if (rec.decided_member)
                ++run.result.fp;
            else
                ++run.result.tn;
        }
        rec.correct = b ? (rec.decided_member && named_right) : !rec.decided_member;
        run.trials.push_back(rec);
    }

    auto& r = run.result;
    r.n = n;
    r.accuracy = static_cast<double>(r.tp + r.tn) / n;
    r.recall = static_cast<double>(r.tp) / (r.tp + r.fn);
    r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
    return run;
}

}  // namespace

GameRun run_mi_game(const GameSetup& setup, int n) { return run_trials(setup, n, {11, 1, 21, 31}); }

void collect_scores(const GameSetup& setup, int n_cal, std::vector<double>& member_scores,
                    std::vector<double>& non_member_scores) {
    GameRun run = run_trials(setup, n_cal, {12, 2, 22, 32});
    for (const auto& t : run.trials) (t.member_truth ? member_scores : non_member_scores).push_back(t.score);
}

}  // namespace metapriv
