#include "clv/vocab.hpp"

#include <stdexcept>

#include "json.hpp"

namespace clv {

namespace {
const char* kReserved[] = {"<pad>", "<bos>", "<eos>", "<BOX>", "<p>", "</p>"};
}

Vocabulary Vocabulary::standard() {
    std::vector<std::string> toks;
    for (const char* r : kReserved) toks.push_back(r);
    for (const char* c : {"house", "car", "boat", "tree", "road", "water", "sports_field"}) toks.push_back(c);
    for (const char* r : {"left_of", "right_of", "above", "below", "near", "between"}) toks.push_back(r);
    for (int d = 0; d <= 9; ++d) toks.push_back(std::to_string(d));
    for (const char* w : {"scene", "has", "describe", "here", "and", "."}) toks.push_back(w);
    return Vocabulary(std::move(toks));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) { build_index(); }

void Vocabulary::build_index() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (index_.count(tokens_[i])) throw std::invalid_argument("vocabulary: duplicate token " + tokens_[i]);
        index_[tokens_[i]] = static_cast<int64_t>(i);
    }
    for (const char* r : kReserved)
        if (!index_.count(r)) throw std::invalid_argument(std::string("vocabulary: missing reserved token ") + r);
    pad_ = index_["<pad>"];
    bos_ = index_["<bos>"];
    eos_ = index_["<eos>"];
    box_ = index_["<BOX>"];
    p_open_ = index_["<p>"];
    p_close_ = index_["</p>"];
}

int64_t Vocabulary::id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw std::out_of_range("vocabulary: unknown token '" + tok + "'");
    return it->second;
}

const std::string& Vocabulary::token(int64_t id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int64_t> Vocabulary::encode(const std::vector<std::string>& toks) const {
    std::vector<int64_t> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int64_t>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int64_t i : ids) out.push_back(token(i));
    return out;
}

uint64_t Vocabulary::hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
        for (char c : t) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ULL;
        }
        h ^= 0xff; // token separator
        h *= 1099511628211ULL;
    }
    return h;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (size_t i = 0; i < tokens_.size(); ++i) j[std::to_string(i)] = tokens_[i];
    return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    std::vector<std::string> toks(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
        const size_t idx = std::stoul(it.key());
        if (idx >= toks.size()) throw std::invalid_argument("vocabulary json: non-dense id " + it.key());
        toks[idx] = it.value().get<std::string>();
    }
    return Vocabulary(std::move(toks));
}

} // namespace clv
