#include "clv/params.hpp"

#include <stdexcept>

namespace clv {

int ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    const int idx = static_cast<int>(entries_.size());
    entries_.push_back(Entry{name, std::move(value), trainable});
    index_[name] = idx;
    return idx;
}

int ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

int64_t ParamStore::scalar_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

int ParamStore::add_randn(const std::string& name, std::vector<int64_t> shape, double std, Rng& rng, bool trainable) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = rng.gaussian(0.0, std);
    return add(name, std::move(t), trainable);
}

int ParamStore::add_zeros(const std::string& name, std::vector<int64_t> shape, bool trainable) {
    return add(name, Tensor::zeros(std::move(shape)), trainable);
}

GradMap::GradMap(const ParamStore& store) {
    grads.reserve(store.size());
    for (const auto& e : store.entries()) grads.push_back(Tensor::zeros(e.value.shape));
}

void GradMap::accumulate(const GradMap& other, double s) {
    for (size_t i = 0; i < grads.size(); ++i) {
        const auto& src = other.grads[i].data;
        auto& dst = grads[i].data;
        for (size_t k = 0; k < dst.size(); ++k) dst[k] += s * src[k];
    }
}

void GradMap::scale(double s) {
    for (auto& g : grads)
        for (double& v : g.data) v *= s;
}

} // namespace clv
