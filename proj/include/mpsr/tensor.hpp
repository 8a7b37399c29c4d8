#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpsr {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// NCHW extent. Vectors are stored as n x c x 1 x 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t item() const { return static_cast<std::size_t>(c) * h * w; }

    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Cache-line aligned storage. Vectorised kernels split work at alignment
/// boundaries, so a fixed alignment keeps floating-point summation order, and
/// therefore results, identical from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

/// Dense row-major NCHW block of doubles with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w)
    {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    double at(int n, int c, int h, int w) const
    {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    double* item_ptr(int n) { return data_.data() + n * shape_.item(); }
    const double* item_ptr(int n) const { return data_.data() + n * shape_.item(); }
    double* plane_ptr(int n, int c) { return item_ptr(n) + c * shape_.plane(); }
    const double* plane_ptr(int n, int c) const { return item_ptr(n) + c * shape_.plane(); }

    /// Same data, new extent with identical element count.
    Tensor reshaped(Shape shape) const;
    /// Copy of batch items [first, first + count).
    Tensor slice_batch(int first, int count) const;

    void fill(double v);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

    double sum() const;
    double max_abs() const;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double, AlignedAllocator<double>> data_;
};

Tensor stack_batch(std::span<const Tensor> items);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

} // namespace mpsr
