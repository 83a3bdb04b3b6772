#pragma once

#include "kpe_forge/error.hpp"
#include "kpe_forge/tensor.hpp"

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kpeforge {

struct TensorSlot {
    std::string name;
    int rows{0};
    int cols{0};
    std::size_t offset{0};

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    friend bool operator==(const TensorSlot&, const TensorSlot&) = default;
};

/// Named row-major tensors packed into one contiguous buffer, so optimizers
/// and checkpoints see a single flat array while model code sees matrices.
template <class T>
class ParamStore {
public:
    int add(std::string name, int rows, int cols) {
        if (find(name)) throw InvalidArgument("duplicate tensor name " + name);
        slots_.push_back({std::move(name), rows, cols, data_.size()});
        data_.resize(data_.size() + slots_.back().size(), T(0));
        return static_cast<int>(slots_.size()) - 1;
    }

    MatMap<T> operator[](int idx) noexcept {
        const auto& s = slots_[static_cast<std::size_t>(idx)];
        return MatMap<T>(data_.data() + s.offset, s.rows, s.cols);
    }
    ConstMatMap<T> operator[](int idx) const noexcept {
        const auto& s = slots_[static_cast<std::size_t>(idx)];
        return ConstMatMap<T>(data_.data() + s.offset, s.rows, s.cols);
    }

    std::optional<int> find(const std::string& name) const noexcept {
        for (std::size_t i = 0; i < slots_.size(); ++i)
            if (slots_[i].name == name) return static_cast<int>(i);
        return std::nullopt;
    }
    int require(const std::string& name) const {
        if (auto idx = find(name)) return *idx;
        throw InvalidArgument("no tensor named " + name);
    }

    const std::vector<TensorSlot>& slots() const noexcept { return slots_; }
    std::span<T> flat() noexcept { return data_; }
    std::span<const T> flat() const noexcept { return data_; }
    std::vector<T>& buffer() noexcept { return data_; }
    const std::vector<T>& buffer() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }

    void setZero() noexcept { std::fill(data_.begin(), data_.end(), T(0)); }

    // Same layout, all zeros (gradient buffers).
    ParamStore zerosLike() const {
        ParamStore z;
        z.slots_ = slots_;
        z.data_.assign(data_.size(), T(0));
        return z;
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& s : slots_) out.add(s.name, s.rows, s.cols);
        for (std::size_t i = 0; i < data_.size(); ++i) out.buffer()[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool sameLayout(const ParamStore& o) const noexcept { return slots_ == o.slots_; }

private:
    std::vector<TensorSlot> slots_;
    std::vector<T> data_;
};

} // namespace kpeforge
