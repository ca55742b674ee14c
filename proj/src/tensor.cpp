#include "metapriv/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace metapriv {

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), 0.0) {
    if (shape_.size() > 3) throw std::invalid_argument("tensor rank > 3");
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 3) throw std::invalid_argument("tensor rank > 3");
    if (shape_size(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("tensor data length does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

int Tensor::rows() const {
    if (rank() != 2) throw std::logic_error("rows() on tensor of shape " + shape_str());
    return shape_[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw std::logic_error("cols() on tensor of shape " + shape_str());
    return shape_[1];
}

double& Tensor::at(int r, int c) {
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(c)];
}

double Tensor::at(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) + static_cast<std::size_t>(c)];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw std::runtime_error("non-finite values in " + what);
}

}  // namespace metapriv
