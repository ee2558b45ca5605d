#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "cascadefuse/embedder.hpp"

using namespace cascadefuse;

TEST_CASE("hashing embedder is deterministic and unit length") {
    HashingEmbedder emb(64);
    auto a = emb.embed("route this query");
    auto b = emb.embed("route this query");
    CHECK(a == b);
    double norm = 0.0;
    for (double x : a) norm += x * x;
    CHECK(std::abs(norm - 1.0) < 1e-12);
    CHECK(a.size() == 64);
}

TEST_CASE("different texts map to different vectors") {
    HashingEmbedder emb(64);
    CHECK(emb.embed("statute liability clause") != emb.embed("sum integer fraction"));
}

TEST_CASE("embedding is case-insensitive") {
    HashingEmbedder emb(64);
    CHECK(emb.embed("Hello World") == emb.embed("hello world"));
}

TEST_CASE("empty text embeds to the zero vector") {
    HashingEmbedder emb(8, 5);
    auto v = emb.embed("");
    for (double x : v) CHECK(x == 0.0);
}

TEST_CASE("distance and cosine checks") {
    EmbeddingVector a{1.0, 0.0}, b{0.0, 1.0};
    CHECK(std::abs(l2_distance(a, b) - std::sqrt(2.0)) < 1e-12);
    CHECK(std::abs(cosine_similarity(a, b)) < 1e-12);
    CHECK(std::abs(cosine_similarity(a, a) - 1.0) < 1e-12);
    CHECK_THROWS_AS(l2_distance(a, EmbeddingVector{1.0}), std::invalid_argument);
}
