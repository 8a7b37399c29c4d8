#include "mpsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mpsr {

std::string Shape::str() const
{
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.size(), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(values.begin(), values.end())
{
    if (data_.size() != shape_.size())
        throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_.str());
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape.size() != size())
        throw ShapeError("reshape " + shape_.str() + " -> " + shape.str());
    Tensor out = *this;
    out.shape_ = shape;
    return out;
}

Tensor Tensor::slice_batch(int first, int count) const
{
    if (first < 0 || count < 0 || first + count > shape_.n)
        throw ShapeError("slice_batch out of range for " + shape_.str());
    Shape s = shape_;
    s.n = count;
    Tensor out(s);
    std::memcpy(out.data(), item_ptr(first), s.size() * sizeof(double));
    return out;
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    require_same_shape(*this, other, "tensor +=");
    for (std::size_t i = 0; i < data_.size(); i++)
        data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s)
{
    for (double& v : data_)
        v *= s;
    return *this;
}

double Tensor::sum() const
{
    double s = 0.0;
    for (double v : data_)
        s += v;
    return s;
}

double Tensor::max_abs() const
{
    double m = 0.0;
    for (double v : data_)
        m = std::max(m, std::abs(v));
    return m;
}

Tensor stack_batch(std::span<const Tensor> items)
{
    if (items.empty())
        throw ShapeError("stack_batch: no items");
    Shape s = items[0].shape();
    int total = 0;
    for (const Tensor& t : items) {
        Shape ts = t.shape();
        if (ts.c != s.c || ts.h != s.h || ts.w != s.w)
            throw ShapeError("stack_batch: " + ts.str() + " vs " + s.str());
        total += ts.n;
    }
    s.n = total;
    Tensor out(s);
    double* dst = out.data();
    for (const Tensor& t : items) {
        std::memcpy(dst, t.data(), t.size() * sizeof(double));
        dst += t.size();
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); i++)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool all_finite(const Tensor& t)
{
    for (double v : t.values())
        if (!std::isfinite(v))
            return false;
    return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
{
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

} // namespace mpsr
