#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace czsr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Axis-aligned region in pixels. (x, y) is the top-left corner.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    bool valid() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
               std::isfinite(h) && w > 0.0 && h > 0.0;
    }

    double area() const { return w * h; }

    bool operator==(const Box& o) const {
        return x == o.x && y == o.y && w == o.w && h == o.h;
    }
};

inline void check_box(const Box& b, const char* what) {
    if (!b.valid()) {
        throw std::invalid_argument(std::string(what) +
                                    ": box must have finite coordinates and positive size");
    }
}

/// The category universe with its seen/unseen partition. Class indices are
/// stable for the lifetime of the object; every class is in exactly one of
/// the two partitions.
class LabelSpace {
public:
    LabelSpace() = default;

    LabelSpace(std::vector<std::string> classes, const std::vector<std::string>& seen_names)
        : classes_(std::move(classes)), seen_mask_(classes_.size(), false) {
        if (classes_.empty()) throw std::invalid_argument("LabelSpace: empty class list");
        for (int i = 0; i < static_cast<int>(classes_.size()); ++i) {
            if (!index_.emplace(classes_[i], i).second) {
                throw std::invalid_argument("LabelSpace: duplicate class name '" + classes_[i] + "'");
            }
        }
        for (const auto& name : seen_names) {
            const int idx = index(name);
            if (seen_mask_[idx]) {
                throw std::invalid_argument("LabelSpace: class '" + name + "' listed as seen twice");
            }
            seen_mask_[idx] = true;
        }
        for (int i = 0; i < size(); ++i) {
            (seen_mask_[i] ? seen_ : unseen_).push_back(i);
        }
    }

    int size() const { return static_cast<int>(classes_.size()); }

    const std::string& name(int c) const {
        check_index(c);
        return classes_[c];
    }

    const std::vector<std::string>& names() const { return classes_; }

    int index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw std::invalid_argument("LabelSpace: unknown class name '" + name + "'");
        }
        return it->second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    bool is_seen(int c) const {
        check_index(c);
        return seen_mask_[c];
    }

    const std::vector<int>& seen() const { return seen_; }
    const std::vector<int>& unseen() const { return unseen_; }

    void check_index(int c) const {
        if (c < 0 || c >= size()) {
            throw std::out_of_range("LabelSpace: class index " + std::to_string(c) +
                                    " out of range [0, " + std::to_string(size()) + ")");
        }
    }

private:
    std::vector<std::string> classes_;
    std::vector<bool> seen_mask_;
    std::vector<int> seen_;
    std::vector<int> unseen_;
    std::unordered_map<std::string, int> index_;
};

/// One localized object: its box, its feature vector, and (when annotated)
/// its ground-truth class index. label < 0 means unlabeled.
struct Region {
    Box box;
    Vector feature;
    int label = -1;
};

/// An image's region set.
struct Scene {
    std::string id;
    std::vector<Region> regions;

    int size() const { return static_cast<int>(regions.size()); }
};

}  // namespace czsr
