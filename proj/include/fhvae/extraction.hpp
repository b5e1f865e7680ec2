#pragma once

#include <string>

#include "fhvae/model.hpp"

namespace fhvae {

enum class ExtractionMode { Z1, Z_VAE, Z1Z2, Z1_MU2 };

inline ExtractionMode parse_extraction_mode(const std::string& s) {
	if (s == "z1") return ExtractionMode::Z1;
	if (s == "z") return ExtractionMode::Z_VAE;
	if (s == "z1z2") return ExtractionMode::Z1Z2;
	if (s == "z1mu2") return ExtractionMode::Z1_MU2;
	throw ConfigError("unknown feature '" + s + "' (expected z1|z|z1z2|z1mu2)");
}

inline std::string to_string(ExtractionMode m) {
	switch (m) {
	case ExtractionMode::Z1: return "z1";
	case ExtractionMode::Z_VAE: return "z";
	case ExtractionMode::Z1Z2: return "z1z2";
	case ExtractionMode::Z1_MU2: return "z1mu2";
	}
	return "z1";
}

/// Number of columns extract_features produces for `mode`.
inline int feature_dim(ExtractionMode mode, const LatentConfig& lc) {
	switch (mode) {
	case ExtractionMode::Z1: return 2 * lc.dim_z1;
	case ExtractionMode::Z_VAE: return 2 * lc.dim_z_vae;
	case ExtractionMode::Z1Z2: return 2 * lc.dim_z1 + 2 * lc.dim_z2;
	case ExtractionMode::Z1_MU2: return 2 * lc.dim_z1 + lc.dim_z2;
	}
	return 0;
}

/// Windows of `width` frames starting every `stride` frames, one flattened
/// window per column. Requires T >= width.
inline Matrix frame_windows(const Matrix& frames, int width, int stride) {
	const Eigen::Index T = frames.rows();
	const Eigen::Index D = frames.cols();
	const Eigen::Index n = (T - width) / stride + 1;
	Matrix out(Eigen::Index(width) * D, n);
	for (Eigen::Index k = 0; k < n; ++k)
		for (int f = 0; f < width; ++f) out.block(Eigen::Index(f) * D, k, D, 1) = frames.row(k * stride + f).transpose();
	return out;
}

namespace detail {

inline void check_utterance(const Matrix& frames, const LatentConfig& lc, const char* what) {
	if (frames.cols() != lc.input_dim)
		throw InputContractError(std::string(what) + ": frame dim " + std::to_string(frames.cols()) + " != " +
								 std::to_string(lc.input_dim));
	if (frames.rows() < lc.input_width)
		throw DataError(std::string(what) + ": utterance has " + std::to_string(frames.rows()) +
						" frames, fewer than the window width " + std::to_string(lc.input_width));
	if (!frames.allFinite()) throw InputContractError(std::string(what) + ": non-finite frames");
}

} // namespace detail

/// Posterior-mean estimate of mu2 for an unseen sequence, from the means of
/// q(z2|x) over its non-overlapping windows:
///   mu2 = sum_n zbar_n / (N + var_z2 / var_mu2).
inline Vector estimate_svector(const Matrix& frames, const ModelParams& p) {
	if (p.mode() != ModelMode::FHVAE) throw InputContractError("estimate_svector: model is not in FHVAE mode");
	detail::check_utterance(frames, p.latent, "estimate_svector");
	const Matrix windows = frame_windows(frames, p.latent.input_width, p.latent.input_width);
	const Matrix zbar = p.enc_z2.forward(windows, nullptr).mean;
	return zbar.rowwise().sum() / (double(zbar.cols()) + p.latent.var_z2 / p.latent.var_mu2);
}

/// Same estimator from precomputed window means (one per column).
inline Vector estimate_svector_from_means(const Matrix& zbar, const LatentConfig& lc) {
	return zbar.rowwise().sum() / (double(zbar.cols()) + lc.var_z2 / lc.var_mu2);
}

/// Frame-aligned derived features: posterior mean and variance of every
/// stride-1 window, padded back to T rows by repeating the first derived
/// frame ceil((W-1)/2) times and the last one floor((W-1)/2) times.
/// For Z1_MU2, `mu2` (table row or estimate) is appended to every frame; it
/// is estimated from the utterance when null.
inline Matrix extract_features(const Matrix& frames, const ModelParams& p, ExtractionMode mode,
							   const Vector* mu2 = nullptr) {
	const LatentConfig& lc = p.latent;
	const bool vae = p.mode() == ModelMode::VAE;
	if ((mode == ExtractionMode::Z_VAE) != vae)
		throw InputContractError("extract_features: feature '" + to_string(mode) + "' does not match a " +
								 to_string(p.mode()) + " checkpoint");
	detail::check_utterance(frames, lc, "extract_features");
	const Matrix windows = frame_windows(frames, lc.input_width, 1);
	const Eigen::Index n = windows.cols();

	Matrix derived(feature_dim(mode, lc), n);
	auto c2 = p.enc_z2.forward(windows, nullptr);
	if (mode == ExtractionMode::Z_VAE) {
		derived << c2.mean, c2.logvar.array().exp().matrix();
	} else {
		auto c1 = p.enc_z1.forward(windows, &c2.mean);
		const Eigen::Index d1 = lc.dim_z1;
		derived.topRows(d1) = c1.mean;
		derived.middleRows(d1, d1) = c1.logvar.array().exp().matrix();
		if (mode == ExtractionMode::Z1Z2) {
			derived.middleRows(2 * d1, lc.dim_z2) = c2.mean;
			derived.bottomRows(lc.dim_z2) = c2.logvar.array().exp().matrix();
		} else if (mode == ExtractionMode::Z1_MU2) {
			Vector s = mu2 ? *mu2 : estimate_svector(frames, p);
			if (s.size() != lc.dim_z2) throw InputContractError("extract_features: mu2 length mismatch");
			derived.bottomRows(lc.dim_z2) = s.replicate(1, n);
		}
	}

	const Eigen::Index T = frames.rows();
	const Eigen::Index front = lc.input_width / 2; // ceil((W-1)/2)
	Matrix out(T, derived.rows());
	for (Eigen::Index t = 0; t < T; ++t) {
		const Eigen::Index k = std::clamp<Eigen::Index>(t - front, 0, n - 1);
		out.row(t) = derived.col(k).transpose();
	}
	return out;
}

} // namespace fhvae
