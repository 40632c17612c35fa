#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace clv {

// Token table with dense ids. Reserved control tokens occupy the low ids.
class Vocabulary {
public:
    static Vocabulary standard(); // the fixed toy vocabulary used by the scene generator

    explicit Vocabulary(std::vector<std::string> tokens);
    Vocabulary() = default;

    int64_t id(const std::string& tok) const;
    const std::string& token(int64_t id) const;
    bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }

    std::vector<int64_t> encode(const std::vector<std::string>& toks) const;
    std::vector<std::string> decode(const std::vector<int64_t>& ids) const;

    // FNV-1a over the token list; embedded in samples to detect mismatches
    uint64_t hash() const;

    int64_t pad() const { return pad_; }
    int64_t bos() const { return bos_; }
    int64_t eos() const { return eos_; }
    int64_t box() const { return box_; }
    int64_t p_open() const { return p_open_; }
    int64_t p_close() const { return p_close_; }

    std::string to_json() const;                 // {"0": "<pad>", ...}
    static Vocabulary from_json(const std::string& text);

private:
    void build_index();

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> index_;
    int64_t pad_ = -1, bos_ = -1, eos_ = -1, box_ = -1, p_open_ = -1, p_close_ = -1;
};

} // namespace clv
