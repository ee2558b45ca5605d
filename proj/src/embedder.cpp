#include "cascadefuse/embedder.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace cascadefuse {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = kFnvOffset;
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

}  // namespace

HashingEmbedder::HashingEmbedder(std::size_t dim, std::size_t ngram) : dim_(dim), ngram_(ngram) {
    if (dim_ == 0) throw std::invalid_argument("embedder: dim must be positive");
    if (ngram_ == 0) throw std::invalid_argument("embedder: ngram must be positive");
}

EmbeddingVector HashingEmbedder::embed(std::string_view text) const {
    std::string norm;
    norm.reserve(text.size() + 2);
    norm.push_back('^');  // boundary markers so short strings still yield n-grams
    for (unsigned char c : text) {
        norm.push_back(static_cast<char>(std::tolower(c)));
    }
    norm.push_back('$');

    EmbeddingVector v(dim_, 0.0);
    if (norm.size() >= ngram_) {
        for (std::size_t i = 0; i + ngram_ <= norm.size(); ++i) {
            std::uint64_t h = fnv1a(std::string_view(norm).substr(i, ngram_));
            std::size_t bucket = static_cast<std::size_t>(h % dim_);
            double sign = ((h >> 32) & 1U) ? 1.0 : -1.0;
            v[bucket] += sign;
        }
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 > 0.0) {
        double inv = 1.0 / std::sqrt(norm2);
        for (double& x : v) x *= inv;
    }
    return v;
}

double l2_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("embedding dimension mismatch: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("embedding dimension mismatch: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

}  // namespace cascadefuse
