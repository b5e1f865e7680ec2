#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "fhvae/error.hpp"

namespace fhvae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Every log-variance head is clamped to this range.
inline constexpr double kLogVarMin = -7.0;
inline constexpr double kLogVarMax = 7.0;
inline const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

/// Diagonal Gaussian stored as mean and log-variance.
struct DiagGaussian {
	Vector mean;
	Vector logvar;

	DiagGaussian() = default;
	DiagGaussian(Vector m, Vector lv) : mean(std::move(m)), logvar(std::move(lv)) {
		if (mean.size() != logvar.size())
			throw InputContractError("DiagGaussian: mean/logvar length mismatch");
	}

	/// Isotropic Gaussian N(mean, var I).
	static DiagGaussian isotropic(const Vector& mean, double var) {
		return {mean, Vector::Constant(mean.size(), std::log(var))};
	}

	Eigen::Index dim() const { return mean.size(); }
	Vector variance() const { return logvar.array().exp().matrix(); }
};

namespace detail {
inline void require_same_length(Eigen::Index a, Eigen::Index b, const char* what) {
	if (a != b)
		throw InputContractError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
								 std::to_string(b) + ")");
}
} // namespace detail

/// Returns mean + exp(logvar / 2) * noise.
inline Vector reparam_sample(const DiagGaussian& g, const Vector& noise) {
	detail::require_same_length(g.dim(), noise.size(), "reparam_sample");
	return g.mean + ((0.5 * g.logvar.array()).exp() * noise.array()).matrix();
}

inline double gaussian_log_prob(const Vector& v, const DiagGaussian& g) {
	detail::require_same_length(v.size(), g.dim(), "gaussian_log_prob");
	const auto diff = (v - g.mean).array();
	return (-0.5 * kLogTwoPi - 0.5 * g.logvar.array() - 0.5 * diff.square() * (-g.logvar.array()).exp()).sum();
}

/// KL(q || p) for diagonal Gaussians, closed form.
inline double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
	detail::require_same_length(q.dim(), p.dim(), "kl_diag_gaussian");
	double kl = 0.0;
	for (Eigen::Index d = 0; d < q.dim(); ++d) {
		// expm1(r) - r >= 0 keeps the variance part non-negative and exactly 0 when r == 0.
		const double r = q.logvar[d] - p.logvar[d];
		const double diff = q.mean[d] - p.mean[d];
		kl += 0.5 * (std::max(0.0, std::expm1(r) - r) + diff * diff * std::exp(-p.logvar[d]));
	}
	return kl;
}

} // namespace fhvae
