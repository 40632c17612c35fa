#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "clv/rng.hpp"
#include "clv/tensor.hpp"

namespace clv {

// Named parameter table. Insertion order is the canonical order used for
// gradient collection, optimizer state, and checkpoint layout.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
    };

    int add(const std::string& name, Tensor value, bool trainable = true);

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    int index_of(const std::string& name) const;

    Entry& entry(int idx) { return entries_[static_cast<size_t>(idx)]; }
    const Entry& entry(int idx) const { return entries_[static_cast<size_t>(idx)]; }
    Tensor& value(const std::string& name) { return entries_[static_cast<size_t>(index_of(name))].value; }
    const Tensor& value(const std::string& name) const { return entries_[static_cast<size_t>(index_of(name))].value; }

    size_t size() const { return entries_.size(); }
    int64_t scalar_count() const;

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    // gaussian(0, std) initialized parameter
    int add_randn(const std::string& name, std::vector<int64_t> shape, double std, Rng& rng, bool trainable = true);
    int add_zeros(const std::string& name, std::vector<int64_t> shape, bool trainable = true);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

// Per-parameter gradient accumulator aligned with a ParamStore.
struct GradMap {
    std::vector<Tensor> grads; // one per store entry, zeros when untouched

    explicit GradMap(const ParamStore& store);
    GradMap() = default;

    void accumulate(const GradMap& other, double scale = 1.0);
    void scale(double s);
};

} // namespace clv
