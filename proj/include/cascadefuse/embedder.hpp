#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cascadefuse {

using EmbeddingVector = std::vector<double>;

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;
};

/// Deterministic text embedder: hashes character n-grams into a fixed number
/// of signed buckets and L2-normalizes. No model weights, no randomness;
/// identical text always maps to the identical vector. Real encoders plug in
/// behind the Embedder interface.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dim = 64, std::size_t ngram = 3);

    EmbeddingVector embed(std::string_view text) const override;
    std::size_t dim() const override { return dim_; }

private:
    std::size_t dim_;
    std::size_t ngram_;
};

double l2_distance(const EmbeddingVector& a, const EmbeddingVector& b);
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

}  // namespace cascadefuse
