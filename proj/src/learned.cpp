#include "cascadefuse/learned.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cascadefuse {

namespace {
constexpr double kLayerNormEps = 1e-6;
}

void TrainingExample::validate() const {
    if (text.empty()) throw std::invalid_argument("training example: empty text");
    if (scores.empty()) throw std::invalid_argument("training example: no model scores");
    for (const auto& [id, s] : scores) {
        if (!(s >= 0.0 && s <= 1.0)) {
            throw std::invalid_argument("training example: score for '" + id +
                                        "' outside [0,1]");
        }
    }
}

FeatureVector combine_features(const EmbeddingVector& h_x, const std::set<Label>& labels,
                               const LabelSpace& space) {
    FeatureVector f;
    f.reserve(h_x.size() + space.size());
    f.insert(f.end(), h_x.begin(), h_x.end());

    std::vector<double> tax(space.size(), 0.0);
    for (const auto& c : labels) {
        tax[space.label_index(c)] = 1.0;  // throws on unknown label
    }
    f.insert(f.end(), tax.begin(), tax.end());

    if (f.empty()) return f;
    double mean = 0.0;
    for (double x : f) mean += x;
    mean /= static_cast<double>(f.size());
    double var = 0.0;
    for (double x : f) var += (x - mean) * (x - mean);
    var /= static_cast<double>(f.size());
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (double& x : f) x = (x - mean) * inv;
    return f;
}

ScorePrediction predict_scores(const FeatureVector& f, const std::vector<ScoreHead>& heads,
                               const ModelRegistry& registry) {
    ScorePrediction out;
    for (const auto& head : heads) {
        if (head.w.size() != f.size()) {
            throw std::invalid_argument("predict_scores: head '" + head.model_id + "' has dim " +
                                        std::to_string(head.w.size()) + ", features have " +
                                        std::to_string(f.size()));
        }
        const ModelProfile& profile = registry.at(head.model_id);
        double norm = head.b;
        for (std::size_t i = 0; i < f.size(); ++i) norm += head.w[i] * f[i];
        double raw = norm * profile.norm_sigma + profile.norm_mu;
        if (raw < 0.0 || raw > 1.0) {
            out.clamped.insert(head.model_id);
            raw = std::clamp(raw, 0.0, 1.0);
        }
        out.norm[head.model_id] = norm;
        out.raw[head.model_id] = raw;
    }
    return out;
}

double mse_loss_and_grad(const std::vector<ScoreHead>& heads,
                         const std::vector<FeatureVector>& features,
                         const std::vector<std::map<std::string, double>>& targets_norm,
                         double weight_decay, std::vector<std::vector<double>>* grad_w,
                         std::vector<double>* grad_b) {
    if (features.size() != targets_norm.size()) {
        throw std::invalid_argument("mse_loss_and_grad: features/targets size mismatch");
    }
    std::size_t dim = features.empty() ? 0 : features.front().size();
    if (grad_w) grad_w->assign(heads.size(), std::vector<double>(dim, 0.0));
    if (grad_b) grad_b->assign(heads.size(), 0.0);

    std::size_t pairs = 0;
    for (const auto& t : targets_norm) pairs += t.size();
    if (pairs == 0) throw std::invalid_argument("mse_loss_and_grad: no target pairs");

    double loss = 0.0;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const ScoreHead& head = heads[h];
        for (std::size_t j = 0; j < features.size(); ++j) {
            auto it = targets_norm[j].find(head.model_id);
            if (it == targets_norm[j].end()) continue;
            const FeatureVector& f = features[j];
            double pred = head.b;
            for (std::size_t i = 0; i < dim; ++i) pred += head.w[i] * f[i];
            double err = pred - it->second;
            loss += err * err;
            if (grad_w || grad_b) {
                double scale = 2.0 * err / static_cast<double>(pairs);
                if (grad_w) {
                    auto& gw = (*grad_w)[h];
                    for (std::size_t i = 0; i < dim; ++i) gw[i] += scale * f[i];
                }
                if (grad_b) (*grad_b)[h] += scale;
            }
        }
    }
    loss /= static_cast<double>(pairs);

    if (weight_decay > 0.0) {
        for (std::size_t h = 0; h < heads.size(); ++h) {
            for (std::size_t i = 0; i < dim; ++i) {
                loss += weight_decay * heads[h].w[i] * heads[h].w[i];
                if (grad_w) (*grad_w)[h][i] += 2.0 * weight_decay * heads[h].w[i];
            }
        }
    }
    return loss;
}

TrainedRouter train_router(const std::vector<TrainingExample>& data, const TrainConfig& cfg,
                           const LabelSpace& space, const Embedder& embedder,
                           const std::vector<std::string>& model_ids) {
    if (data.empty()) throw std::invalid_argument("train_router: empty dataset");
    if (model_ids.empty()) throw std::invalid_argument("train_router: no models");

    TrainedRouter router;
    for (const auto& id : model_ids) {
        double sum = 0.0, sum2 = 0.0;
        std::size_t n = 0;
        for (const auto& ex : data) {
            auto it = ex.scores.find(id);
            if (it == ex.scores.end()) continue;
            sum += it->second;
            sum2 += it->second * it->second;
            ++n;
        }
        NormStats stats;
        if (n > 0) {
            stats.mu = sum / static_cast<double>(n);
            double var = sum2 / static_cast<double>(n) - stats.mu * stats.mu;
            // Guard against catastrophic cancellation on constant targets.
            stats.sigma = (n >= 2 && var > 1e-12) ? std::sqrt(var) : 1.0;
        }
        router.norm[id] = stats;
    }

    std::vector<FeatureVector> features;
    std::vector<std::map<std::string, double>> targets;
    features.reserve(data.size());
    targets.reserve(data.size());
    for (const auto& ex : data) {
        ex.validate();
        features.push_back(combine_features(embedder.embed(ex.text), ex.labels, space));
        std::map<std::string, double> t;
        for (const auto& [id, s] : ex.scores) {
            auto it = router.norm.find(id);
            if (it == router.norm.end()) continue;  // score for an untracked model
            t[id] = (s - it->second.mu) / it->second.sigma;
        }
        targets.push_back(std::move(t));
    }

    std::size_t dim = features.front().size();
    router.heads.reserve(model_ids.size());
    for (const auto& id : model_ids) {
        router.heads.push_back(ScoreHead{id, std::vector<double>(dim, 0.0), 0.0});
    }

    std::vector<std::vector<double>> grad_w;
    std::vector<double> grad_b;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss = mse_loss_and_grad(router.heads, features, targets, cfg.weight_decay,
                                        &grad_w, &grad_b);
        if (epoch == 0) router.initial_loss = loss;
        for (std::size_t h = 0; h < router.heads.size(); ++h) {
            auto& head = router.heads[h];
            for (std::size_t i = 0; i < dim; ++i) head.w[i] -= cfg.lr * grad_w[h][i];
            head.b -= cfg.lr * grad_b[h];
        }
        router.loss_history.push_back(loss);
    }
    router.final_loss =
        mse_loss_and_grad(router.heads, features, targets, cfg.weight_decay, nullptr, nullptr);
    return router;
}

RoutingDecision route_learned(const Subproblem& x, int k, const Constraints& c,
                              const std::vector<ScoreHead>& heads, const ModelRegistry& registry,
                              const LabelSpace& space, const TaxonomyConfig& tax_cfg,
                              const Embedder& embedder, const SlowClassifier* slow) {
    if (k < 1) throw std::invalid_argument("route_learned: k must be >= 1");

    LabelDistribution p_fast = fast_classify(embedder.embed(x.text), space, tax_cfg.alpha);
    LabelDistribution fused =
        slow ? fuse_distributions(slow->classify(x, space), p_fast, tax_cfg.lambda) : p_fast;
    std::set<Label> labels = select_labels(fused, tax_cfg);

    FeatureVector f = combine_features(embedder.embed(x.text), labels, space);
    ScorePrediction pred = predict_scores(f, heads, registry);

    RoutingDecision decision;
    decision.provenance = Provenance::Learned;
    decision.labels = labels;
    decision.label_probs = fused.probs;
    decision.top_label_prob = fused.top().second;
    decision.scores = pred.raw;
    decision.clamped_scores = pred.clamped;

    std::vector<const ModelProfile*> survivors;
    for (const auto& m : filter_by_constraints(registry.models(), c)) {
        if (pred.raw.count(m.id)) survivors.push_back(registry.find(m.id));
    }
    std::stable_sort(survivors.begin(), survivors.end(),
                     [&](const ModelProfile* a, const ModelProfile* b) {
                         double sa = pred.raw.at(a->id), sb = pred.raw.at(b->id);
                         if (sa != sb) return sa > sb;
                         if (a->tier != b->tier) return a->tier < b->tier;
                         return a->id < b->id;
                     });
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), survivors.size());
    for (std::size_t i = 0; i < take; ++i) decision.models.push_back(survivors[i]->id);
    decision.no_feasible = decision.models.empty();
    return decision;
}

nlohmann::json TrainedRouter::to_json() const {
    nlohmann::json models = nlohmann::json::object();
    for (const auto& head : heads) {
        auto it = norm.find(head.model_id);
        models[head.model_id] = {{"w", head.w},
                                 {"b", head.b},
                                 {"mu", it != norm.end() ? it->second.mu : 0.0},
                                 {"sigma", it != norm.end() ? it->second.sigma : 1.0}};
    }
    return nlohmann::json{{"models", models},
                          {"initial_loss", initial_loss},
                          {"final_loss", final_loss}};
}

TrainedRouter TrainedRouter::from_json(const nlohmann::json& doc) {
    TrainedRouter router;
    for (const auto& [id, entry] : doc.at("models").items()) {
        ScoreHead head;
        head.model_id = id;
        entry.at("w").get_to(head.w);
        entry.at("b").get_to(head.b);
        router.heads.push_back(std::move(head));
        router.norm[id] = NormStats{entry.at("mu").get<double>(), entry.at("sigma").get<double>()};
        if (!(router.norm[id].sigma > 0)) {
            throw std::invalid_argument("router '" + id + "': sigma must be > 0");
        }
    }
    router.initial_loss = doc.value("initial_loss", 0.0);
    router.final_loss = doc.value("final_loss", 0.0);
    return router;
}

void TrainedRouter::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("router: cannot write '" + path + "'");
    out << to_json().dump(2) << '\n';
}

TrainedRouter TrainedRouter::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("router: cannot open '" + path + "'");
    nlohmann::json doc;
    in >> doc;
    return from_json(doc);
}

std::vector<TrainingExample> load_training_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("training data: cannot open '" + path + "'");
    std::vector<TrainingExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, true);
        TrainingExample ex;
        j.at("text").get_to(ex.text);
        if (j.contains("labels")) j.at("labels").get_to(ex.labels);
        j.at("scores").get_to(ex.scores);
        try {
            ex.validate();
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

void save_training_jsonl(const std::vector<TrainingExample>& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("training data: cannot write '" + path + "'");
    for (const auto& ex : data) {
        nlohmann::json j{{"text", ex.text}, {"labels", ex.labels}, {"scores", ex.scores}};
        out << j.dump() << '\n';
    }
}

}  // namespace cascadefuse
