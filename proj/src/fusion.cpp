#include "cascadefuse/fusion.hpp"

#include <algorithm>
#include <stdexcept>

namespace cascadefuse {

const char* to_string(FusionKind k) {
    switch (k) {
        case FusionKind::JudgeBest: return "judge_best";
        case FusionKind::ConfidenceWeightedSelect: return "confidence_weighted_select";
        case FusionKind::FirstAccepted: return "first_accepted";
    }
    return "unknown";
}

FusionKind fusion_kind_from_string(const std::string& name) {
    if (name == "judge_best") return FusionKind::JudgeBest;
    if (name == "confidence_weighted_select") return FusionKind::ConfidenceWeightedSelect;
    if (name == "first_accepted") return FusionKind::FirstAccepted;
    throw std::invalid_argument("unknown fusion strategy '" + name + "'");
}

namespace {

FusionOutcome pick(const FusionCandidate& c) {
    return FusionOutcome{c.text, c.model_id, c.pi, {}};
}

const FusionCandidate& argmax_pi(const std::vector<FusionCandidate>& outputs) {
    const FusionCandidate* best = &outputs.front();
    for (const auto& c : outputs) {
        if (c.pi > best->pi || (c.pi == best->pi && c.model_id < best->model_id)) best = &c;
    }
    return *best;
}

}  // namespace

FusionOutcome fuse_outputs(const std::string& query, const std::vector<FusionCandidate>& outputs,
                           const FusionStrategy& strategy, const Judge* judge) {
    if (outputs.empty()) throw std::invalid_argument("fuse_outputs: no outputs to fuse");

    switch (strategy.kind) {
        case FusionKind::ConfidenceWeightedSelect:
            return pick(argmax_pi(outputs));

        case FusionKind::FirstAccepted:
            for (const auto& c : outputs) {
                if (c.pi >= strategy.delta) return pick(c);
            }
            return pick(argmax_pi(outputs));

        case FusionKind::JudgeBest: {
            if (!judge) throw std::invalid_argument("fuse_outputs: JudgeBest requires a judge");
            FusionOutcome out;
            const FusionCandidate* best = nullptr;
            double best_score = -1.0;
            for (const auto& c : outputs) {
                double s = judge_evaluate(query, c.text, *judge).score;
                out.judge_scores[c.model_id] = s;
                bool better = s > best_score ||
                              (s == best_score && best &&
                               (c.pi > best->pi ||
                                (c.pi == best->pi && c.model_id < best->model_id)));
                if (!best || better) {
                    best = &c;
                    best_score = s;
                }
            }
            out.text = best->text;
            out.model_id = best->model_id;
            out.pi = best->pi;
            return out;
        }
    }
    throw std::logic_error("unreachable fusion kind");
}

}  // namespace cascadefuse
