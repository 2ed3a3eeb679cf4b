#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace ppoewma {

/// Dense row-major matrix of doubles. Rows index samples in every batch
/// computation of this library.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    bool empty() const noexcept { return m_data.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept {
        assert(r < m_rows && c < m_cols);
        return m_data[r * m_cols + c];
    }
    double operator()(std::size_t r, std::size_t c) const noexcept {
        assert(r < m_rows && c < m_cols);
        return m_data[r * m_cols + c];
    }

    std::span<double> row(std::size_t r) noexcept {
        return {m_data.data() + r * m_cols, m_cols};
    }
    std::span<const double> row(std::size_t r) const noexcept {
        return {m_data.data() + r * m_cols, m_cols};
    }

    double* data() noexcept { return m_data.data(); }
    const double* data() const noexcept { return m_data.data(); }
    std::vector<double>& storage() noexcept { return m_data; }
    const std::vector<double>& storage() const noexcept { return m_data; }

    /// Rows selected by `indices`, in that order.
    Matrix gather_rows(std::span<const std::size_t> indices) const {
        Matrix out(indices.size(), m_cols);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const auto src = row(indices[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

template <typename T>
std::vector<T> gather(std::span<const T> values, std::span<const std::size_t> indices) {
    std::vector<T> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(values[i]);
    return out;
}

}  // namespace ppoewma
