#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cascadefuse/core.hpp"
#include "cascadefuse/embedder.hpp"
#include "cascadefuse/taxonomy.hpp"

namespace cascadefuse {

using FeatureVector = std::vector<double>;

/// One linear scoring head per model: predicted_norm = w . f + b.
struct ScoreHead {
    std::string model_id;
    std::vector<double> w;
    double b = 0.0;
};

/// One labeled training record: text, taxonomy labels, and raw performance
/// scores in [0,1] for at least one model.
struct TrainingExample {
    std::string text;
    std::set<Label> labels;
    std::map<std::string, double> scores;

    void validate() const;
};

struct TrainConfig {
    double lr = 0.05;
    int epochs = 500;
    double weight_decay = 1e-2;
};

struct NormStats {
    double mu = 0.0;
    double sigma = 1.0;
};

struct TrainedRouter {
    std::vector<ScoreHead> heads;
    std::map<std::string, NormStats> norm;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> loss_history;  // per-epoch pre-step loss

    nlohmann::json to_json() const;
    static TrainedRouter from_json(const nlohmann::json& doc);
    void save(const std::string& path) const;
    static TrainedRouter load(const std::string& path);
};

/// Concatenates [h_x ; multi-hot labels] and normalizes the result to zero
/// mean and unit variance across its own entries (epsilon 1e-6 in the
/// denominator). An all-constant input maps to the all-zero vector.
FeatureVector combine_features(const EmbeddingVector& h_x, const std::set<Label>& labels,
                               const LabelSpace& space);

struct ScorePrediction {
    std::map<std::string, double> raw;      // denormalized, clamped to [0,1]
    std::map<std::string, double> norm;     // w . f + b, before denormalization
    std::set<std::string> clamped;          // models whose raw score was clamped
};

/// Applies every head to `f` and denormalizes with the per-model stats held
/// by the registry profile: raw = norm * sigma + mu, clamped to [0,1].
ScorePrediction predict_scores(const FeatureVector& f, const std::vector<ScoreHead>& heads,
                               const ModelRegistry& registry);

/// Full-batch MSE loss over the present (example, model) score pairs, plus
/// L2 weight decay on the head weights. Returns the loss; `grad_w`/`grad_b`
/// (when non-null) receive the analytic gradient, laid out per head.
double mse_loss_and_grad(const std::vector<ScoreHead>& heads,
                         const std::vector<FeatureVector>& features,
                         const std::vector<std::map<std::string, double>>& targets_norm,
                         double weight_decay, std::vector<std::vector<double>>* grad_w,
                         std::vector<double>* grad_b);

/// Computes per-model normalization stats from the training targets, then
/// fits the heads by full-batch gradient descent on the z-scored targets.
TrainedRouter train_router(const std::vector<TrainingExample>& data, const TrainConfig& cfg,
                           const LabelSpace& space, const Embedder& embedder,
                           const std::vector<std::string>& model_ids);

/// Predicts raw scores, filters by constraints, and returns the k best
/// survivors (ties: lower tier, then id).
RoutingDecision route_learned(const Subproblem& x, int k, const Constraints& c,
                              const std::vector<ScoreHead>& heads, const ModelRegistry& registry,
                              const LabelSpace& space, const TaxonomyConfig& tax_cfg,
                              const Embedder& embedder, const SlowClassifier* slow = nullptr);

std::vector<TrainingExample> load_training_jsonl(const std::string& path);
void save_training_jsonl(const std::vector<TrainingExample>& data, const std::string& path);

}  // namespace cascadefuse
