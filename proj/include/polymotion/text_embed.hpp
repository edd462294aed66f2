#pragma once

#include "polymotion/common.hpp"

#include <string>
#include <vector>

namespace polymotion {

/// Frozen hashed bag-of-tokens text encoder. Tokens are lowercased
/// whitespace-separated words hashed into `vocab` bins; the count vector is
/// multiplied by a fixed vocab x dim projection drawn from `seed`.
class TextEmbedder {
public:
    static constexpr std::uint64_t kDefaultSeed = 0x7e47e4b3dd1ull;

    explicit TextEmbedder(int vocab = 1024, int dim = 64, std::uint64_t seed = kDefaultSeed);

    int vocab() const { return vocab_; }
    int dim() const { return dim_; }
    std::uint64_t seed() const { return seed_; }

    /// 1 x dim. Empty (or whitespace-only) text maps to the null embedding.
    Mat embed(const std::string& text) const;
    Mat null_embedding() const { return Mat::Zero(1, dim_); }
    /// One row per text.
    Mat embed_all(const std::vector<std::string>& texts) const;

    static std::vector<std::string> tokenize(const std::string& text);

private:
    int vocab_;
    int dim_;
    std::uint64_t seed_;
    Mat projection_;
};

}  // namespace polymotion
