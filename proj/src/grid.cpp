#include "mkvrisk/grid.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mkv {

UniformGrid::UniformGrid(std::vector<Axis> axes) : axes_(std::move(axes)) {
    if (axes_.empty() || axes_.size() > kMaxGridDim) {
        throw std::invalid_argument("grid dimension must be 1..3");
    }
    for (const auto& a : axes_) {
        if (a.points < 2 || !(a.hi > a.lo) || !std::isfinite(a.lo) || !std::isfinite(a.hi)) {
            throw std::invalid_argument("grid axis needs hi > lo and at least 2 points");
        }
    }
    size_ = 1;
    for (std::size_t k = axes_.size(); k-- > 0;) {
        strides_[k] = size_;
        size_ *= axes_[k].points;
    }
}

UniformGrid UniformGrid::cube(std::size_t dim, double lo, double hi, std::size_t points) {
    return UniformGrid(std::vector<Axis>(dim, Axis{lo, hi, points}));
}

std::array<std::size_t, kMaxGridDim> UniformGrid::unflatten(std::size_t flat) const {
    std::array<std::size_t, kMaxGridDim> idx{};
    for (std::size_t k = 0; k < axes_.size(); ++k) {
        idx[k] = flat / strides_[k];
        flat -= idx[k] * strides_[k];
    }
    return idx;
}

void UniformGrid::point(std::size_t flat, std::span<double> out) const {
    const auto idx = unflatten(flat);
    for (std::size_t k = 0; k < axes_.size(); ++k) out[k] = axes_[k].coord(idx[k]);
}

bool UniformGrid::on_boundary(std::size_t flat) const {
    const auto idx = unflatten(flat);
    for (std::size_t k = 0; k < axes_.size(); ++k) {
        if (idx[k] == 0 || idx[k] + 1 == axes_[k].points) return true;
    }
    return false;
}

double UniformGrid::radius() const {
    double r = 0.0;
    for (const auto& a : axes_) r = std::max({r, std::abs(a.lo), std::abs(a.hi)});
    return r;
}

bool UniformGrid::operator==(const UniformGrid& o) const {
    if (axes_.size() != o.axes_.size()) return false;
    for (std::size_t k = 0; k < axes_.size(); ++k) {
        if (axes_[k].lo != o.axes_[k].lo || axes_[k].hi != o.axes_[k].hi ||
            axes_[k].points != o.axes_[k].points) {
            return false;
        }
    }
    return true;
}

double GridTable::interpolate(std::span<const double> x) const {
    const std::size_t d = grid.dim();
    if (x.size() != d) throw std::invalid_argument("interpolation point has wrong dimension");
    std::array<std::size_t, kMaxGridDim> base{};
    std::array<double, kMaxGridDim> frac{};
    for (std::size_t k = 0; k < d; ++k) {
        const Axis& a = grid.axis(k);
        const double u = (x[k] - a.lo) / a.step();
        const double cell = std::clamp(std::floor(u), 0.0, static_cast<double>(a.points - 2));
        base[k] = static_cast<std::size_t>(cell);
        frac[k] = u - cell;  // may leave [0,1] outside the box: linear extension
    }
    double acc = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
        double w = 1.0;
        std::size_t flat = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const bool up = (corner >> k) & 1U;
            w *= up ? frac[k] : 1.0 - frac[k];
            flat += (base[k] + (up ? 1 : 0)) * grid.stride(k);
        }
        if (w == 0.0) continue;
        const double v = values[flat];
        if (!std::isfinite(v)) return v;
        acc += w * v;
    }
    return acc;
}

double GridTable::max_abs_finite() const {
    double m = 0.0;
    for (double v : values) {
        if (std::isfinite(v)) m = std::max(m, std::abs(v));
    }
    return m;
}

void write_grid_csv(std::ostream& os, const GridTable& table, const std::string& coord_prefix) {
    const std::size_t d = table.grid.dim();
    for (std::size_t k = 0; k < d; ++k) os << coord_prefix << (k + 1) << ',';
    os << "value\n";
    std::vector<double> p(d);
    os.precision(17);
    for (std::size_t i = 0; i < table.grid.size(); ++i) {
        table.grid.point(i, p);
        for (double c : p) os << c << ',';
        os << table.values[i] << '\n';
    }
}

namespace {

double parse_csv_number(const std::string& cell, std::size_t line) {
    if (cell == "inf" || cell == "+inf") return std::numeric_limits<double>::infinity();
    if (cell == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("grid csv line " + std::to_string(line) + ": bad number '" + cell + "'");
    }
}

}  // namespace

GridTable read_grid_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("grid csv: empty input");
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns < 2 || columns - 1 > kMaxGridDim) {
        throw std::invalid_argument("grid csv: expected 1..3 coordinate columns plus value");
    }
    const std::size_t d = columns - 1;
    std::vector<std::vector<double>> coords;
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(parse_csv_number(cell, lineno));
        if (row.size() != columns) {
            throw std::invalid_argument("grid csv line " + std::to_string(lineno) + ": wrong column count");
        }
        values.push_back(row.back());
        row.pop_back();
        coords.push_back(std::move(row));
    }
    std::vector<Axis> axes(d);
    for (std::size_t k = 0; k < d; ++k) {
        std::vector<double> c;
        for (const auto& r : coords) c.push_back(r[k]);
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
        if (c.size() < 2) throw std::invalid_argument("grid csv: axis needs at least 2 distinct coordinates");
        axes[k] = Axis{c.front(), c.back(), c.size()};
        const double h = axes[k].step();
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (std::abs(c[i] - axes[k].coord(i)) > 1e-9 * std::max(1.0, std::abs(c[i]) + h)) {
                throw std::invalid_argument("grid csv: axis " + std::to_string(k + 1) + " is not uniform");
            }
        }
    }
    GridTable table{UniformGrid(std::move(axes)), {}};
    if (values.size() != table.grid.size()) {
        throw std::invalid_argument("grid csv: row count does not match a full tensor grid");
    }
    std::vector<double> p(d);
    for (std::size_t i = 0; i < values.size(); ++i) {
        table.grid.point(i, p);
        for (std::size_t k = 0; k < d; ++k) {
            if (std::abs(p[k] - coords[i][k]) > 1e-9 * std::max(1.0, std::abs(p[k]))) {
                throw std::invalid_argument("grid csv: rows are not in row-major grid order");
            }
        }
    }
    table.values = std::move(values);
    return table;
}

}  // namespace mkv
