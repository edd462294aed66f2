#include "polymotion/text_embed.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace polymotion {

TextEmbedder::TextEmbedder(int vocab, int dim, std::uint64_t seed) : vocab_(vocab), dim_(dim), seed_(seed) {
    if (vocab < 1 || dim < 1) throw InvalidArgument("text embedder: vocab and dim must be >= 1");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    projection_.resize(vocab, dim);
    for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

std::vector<std::string> TextEmbedder::tokenize(const std::string& text) {
    std::string lower(text);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::istringstream in(lower);
    std::vector<std::string> tokens;
    for (std::string tok; in >> tok;) tokens.push_back(tok);
    return tokens;
}

Mat TextEmbedder::embed(const std::string& text) const {
    Mat out = Mat::Zero(1, dim_);
    for (const auto& tok : tokenize(text)) out += projection_.row(static_cast<Eigen::Index>(fnv1a(tok) % vocab_));
    return out;
}

Mat TextEmbedder::embed_all(const std::vector<std::string>& texts) const {
    Mat out(static_cast<Eigen::Index>(texts.size()), dim_);
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed(texts[i]);
    return out;
}

}  // namespace polymotion
