#pragma once

#include "czsr/types.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace czsr {

/// Sinusoidal embedding of the 4-d geometric configuration feature.
/// Each input component is expanded into dims_per_component values:
/// sin/cos pairs at wavelengths wavelength_base^(2m/d), m = 0..d/2-1.
struct GeomEmbedConfig {
    int dims_per_component = 64;
    double wavelength_base = 10000.0;
    double clamp_eps = 1e-3;

    int output_dim() const { return 4 * dims_per_component; }

    void validate() const {
        if (dims_per_component < 2 || dims_per_component % 2 != 0) {
            throw std::invalid_argument("GeomEmbedConfig: dims_per_component must be even and >= 2");
        }
        if (!(wavelength_base > 1.0)) {
            throw std::invalid_argument("GeomEmbedConfig: wavelength_base must be > 1");
        }
        if (!(clamp_eps > 0.0)) {
            throw std::invalid_argument("GeomEmbedConfig: clamp_eps must be > 0");
        }
    }
};

/// Translation- and scale-invariant pairwise configuration feature:
///   [ log(|x_i-x_j| / w_i), log(|y_i-y_j| / h_i), log(w_j/w_i), log(h_j/h_i) ]
/// A zero axis offset would send the log to -inf, so offsets are clamped from
/// below at clamp_eps * (subject size), which keeps the feature finite without
/// breaking scale invariance.
inline std::array<double, 4> geometry_feature(const Box& subject, const Box& object,
                                              double clamp_eps) {
    check_box(subject, "geometry_feature(subject)");
    check_box(object, "geometry_feature(object)");
    if (!(clamp_eps > 0.0)) {
        throw std::invalid_argument("geometry_feature: clamp_eps must be > 0");
    }
    const double dx = std::max(std::abs(subject.x - object.x), clamp_eps * subject.w);
    const double dy = std::max(std::abs(subject.y - object.y), clamp_eps * subject.h);
    return {std::log(dx / subject.w), std::log(dy / subject.h),
            std::log(object.w / subject.w), std::log(object.h / subject.h)};
}

/// Expands g onto the high-dimensional sinusoid basis. Output layout: per
/// input component, d/2 (sin, cos) pairs at increasing wavelength; total
/// length 4 * dims_per_component. Every output lies in [-1, 1].
inline Vector sinusoidal_embed(const std::array<double, 4>& g, const GeomEmbedConfig& cfg) {
    cfg.validate();
    const int d = cfg.dims_per_component;
    Vector out(4 * d);
    int pos = 0;
    for (double v : g) {
        for (int m = 0; m < d / 2; ++m) {
            const double wavelength = std::pow(cfg.wavelength_base, 2.0 * m / d);
            out[pos++] = std::sin(v / wavelength);
            out[pos++] = std::cos(v / wavelength);
        }
    }
    return out;
}

/// geometry_feature followed by sinusoidal_embed; the relation net's input.
inline Vector embed_pair_geometry(const Box& subject, const Box& object,
                                  const GeomEmbedConfig& cfg) {
    return sinusoidal_embed(geometry_feature(subject, object, cfg.clamp_eps), cfg);
}

}  // namespace czsr
