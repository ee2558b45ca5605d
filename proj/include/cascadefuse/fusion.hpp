#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cascadefuse/signals.hpp"

namespace cascadefuse {

enum class FusionKind { JudgeBest, ConfidenceWeightedSelect, FirstAccepted };

const char* to_string(FusionKind k);
FusionKind fusion_kind_from_string(const std::string& name);

struct FusionStrategy {
    FusionKind kind = FusionKind::ConfidenceWeightedSelect;
    double delta = 0.5;  // FirstAccepted threshold
};

struct FusionCandidate {
    std::string model_id;
    std::string text;
    double pi = 0.0;
};

struct FusionOutcome {
    std::string text;
    std::string model_id;
    double pi = 0.0;
    std::map<std::string, double> judge_scores;  // JudgeBest only
};

/// Selection-style fusion: the result is always one of the inputs.
///   JudgeBest                -> argmax judge score (ties: higher pi, then id)
///   ConfidenceWeightedSelect -> argmax pi (ties: id)
///   FirstAccepted            -> first pi >= delta, else argmax pi
FusionOutcome fuse_outputs(const std::string& query, const std::vector<FusionCandidate>& outputs,
                           const FusionStrategy& strategy, const Judge* judge);

}  // namespace cascadefuse
