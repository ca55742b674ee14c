#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace metapriv {

// Dense row-major tensor of doubles, rank 0..3. Rank 0 is a scalar with one
// element. All numeric modules build on this; shape errors throw.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    // 2-D accessors; throw unless rank()==2.
    int rows() const;
    int cols() const;

    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }
    double& at(int r, int c);
    double at(int r, int c) const;

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::int64_t shape_size(const std::vector<int>& shape);

// Throws std::runtime_error naming `what` if t contains a NaN or infinity.
void require_finite(const Tensor& t, const std::string& what);

}  // namespace metapriv
