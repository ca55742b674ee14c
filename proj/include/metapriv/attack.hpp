#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "metapriv/defense.hpp"
#include "metapriv/fewshot.hpp"
#include "metapriv/maml.hpp"

namespace metapriv {

struct AttackConfig {
    int iterations = 100;
    double step_size = 0.1;
    // The variation term is an unnormalized pixel sum, so it needs a small
    // weight to stay subordinate to the cosine term on 28x28 images.
    double tv_weight = 0.0003;
    int batch_slots = 0;     // 0 = derive from the slot labels
    double threshold = 0.5;  // similarity cutoff d for membership calls
    std::uint64_t seed = 0;  // initialization of the non-prior slots

    void validate() const;
};

struct ReconResult {
    Tensor x_star;                   // [slots x 784] optimized batch
    Tensor recovered;                // [28 x 28] target slot, reshaped
    double final_objective = 0.0;
    double ssim_to_prior = 0.0;
    int iterations_run = 0;
    std::vector<double> trajectory;  // objective of iterate 0..iterations
};

// Anisotropic total variation: sum of absolute horizontal and vertical
// neighbor differences. Accepts one [H x W] image or a [B x H x W] stack.
double total_variation(const Tensor& img);

// Mean structural similarity over all 7x7 windows (uniform weights,
// stabilizers C1 = 0.01^2 and C2 = 0.03^2 on a unit dynamic range).
double ssim(const Tensor& a, const Tensor& b);

// Reconstructs a candidate batch whose model gradient at omega matches the
// shared gradient g in cosine distance, with a total-variation penalty. The
// prior image occupies target_slot; remaining slots start from uniform noise.
ReconResult reconstruct_query(const GradientVector& g, const ParamVector& omega, const Tensor& prior,
                              const std::vector<int>& slot_labels, int target_slot, const AttackConfig& cfg);

// Same objective, but the candidate plays the support role: each iteration
// adapts omega on the candidate batch and differentiates the query-loss
// gradient through that adaptation, so knowledge of the query set is assumed.
ReconResult reconstruct_support(const GradientVector& g, const ParamVector& omega, const LabeledBatch& query,
                                const Tensor& prior, const std::vector<int>& slot_labels, int target_slot,
                                double alpha_inner, const AttackConfig& cfg);

// Member call when similarity reaches the threshold; ties count as member.
bool decide_membership(const Tensor& prior, const Tensor& reconstructed, double threshold);

// Threshold maximizing balanced accuracy; among maximizers, the midpoint of
// the widest separating gap. A fully interleaved (chance-level) score pattern
// falls back to the midpoint of the overall score range.
double calibrate_threshold(const std::vector<double>& member_scores, const std::vector<double>& non_member_scores);

enum class TargetSet { Query, Support };
enum class GameScope { Local, Global };

const char* target_set_name(TargetSet t);

struct GameResult {
    double accuracy = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    int tp = 0, fp = 0, tn = 0, fn = 0;
    int n = 0;
};

struct TrialRecord {
    int trial = 0;
    bool member_truth = false;
    int learner = 0;          // which task held the target
    int guessed_learner = 0;  // adversary's pick (Global scope)
    double score = 0.0;       // similarity of prior vs reconstruction
    bool decided_member = false;
    bool correct = false;
};

struct GameRun {
    GameResult result;
    std::vector<TrialRecord> trials;
};

struct GameSetup {
    ParamVector omega;
    const Dataset* data = nullptr;
    FewShotSpec spec;
    TrainConfig engine;  // inner-loop and gradient-order settings
    AttackConfig attack;
    NoiseSpec noise;
    TargetSet target = TargetSet::Query;
    GameScope scope = GameScope::Local;
    int num_learners = 1;
    std::uint64_t seed = 0;

    // Test hook: replaces the reconstruction adversary with an arbitrary
    // decision rule (e.g. ground truth or a coin flip).
    std::function<bool(int trial, bool truth)> decision_override;
};

// Balanced membership game: n/2 member and n/2 non-member trials in a
// seed-shuffled order, per-trial random streams, aggregation in trial order.
// Under Global scope a member call only counts as a true positive when the
// adversary also names the right learner; a member call naming the wrong
// learner is a miss.
GameRun run_mi_game(const GameSetup& setup, int n);

// Runs seeded calibration trials (a stream disjoint from the game's) and
// collects the similarity scores by ground truth.
void collect_scores(const GameSetup& setup, int n_cal, std::vector<double>& member_scores,
                    std::vector<double>& non_member_scores);

}  // namespace metapriv
