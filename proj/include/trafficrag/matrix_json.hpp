#pragma once

#include <json.hpp>

#include "trafficrag/matrix.hpp"

namespace trafficrag {

// Fixture format: JSON array of rows, each row an array of numbers.
inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw KernelError("matrix json: expected array of arrays");
    if (j.empty()) return Matrix();
    const std::size_t cols = j[0].size();
    Matrix m(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols)
            throw KernelError("matrix json: ragged rows");
        for (std::size_t c = 0; c < cols; ++c) m.at(r, c) = j[r][c].get<double>();
    }
    return m;
}

}  // namespace trafficrag
