#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gearlab/core.hpp"

namespace gearlab {

// Fixed-capacity FIFO ring; sampling is uniform over stored entries.
template <class T>
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : cap_(capacity) {
        if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
        data_.reserve(capacity);
    }

    void push(const T& item) {
        if (data_.size() < cap_) {
            data_.push_back(item);
        } else {
            data_[cursor_] = item;
        }
        cursor_ = (cursor_ + 1) % cap_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return cap_; }
    // age 0 is the oldest stored entry
    const T& oldest(std::size_t age) const {
        if (age >= data_.size()) throw std::out_of_range("replay index out of range");
        return data_.size() < cap_ ? data_[age] : data_[(cursor_ + age) % cap_];
    }
    const T& operator[](std::size_t slot) const { return data_[slot]; }

    std::vector<std::size_t> sample(std::size_t n, Rng& rng) const {
        if (data_.empty()) throw std::logic_error("sampling from an empty replay buffer");
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data_.size()) - 1));
        return idx;
    }

private:
    std::size_t cap_;
    std::size_t cursor_ = 0;
    std::vector<T> data_;
};

}  // namespace gearlab
