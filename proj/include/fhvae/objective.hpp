#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fhvae/gaussian.hpp"
#include "fhvae/model.hpp"

namespace fhvae {

/// Per-segment terms of the (discriminative) segment lower bound.
/// `total` is always recon - kl_z1 - kl_z2 + logp_mu2_scaled + alpha * disc.
struct LossBreakdown {
	double recon = 0.0;
	double kl_z1 = 0.0;
	double kl_z2 = 0.0;
	double logp_mu2_scaled = 0.0;
	double disc = 0.0;
	double total = 0.0;
	double alpha = 0.0;

	static double combine(double recon, double kl_z1, double kl_z2, double logp_mu2_scaled, double disc, double alpha) {
		return recon - kl_z1 - kl_z2 + logp_mu2_scaled + alpha * disc;
	}
	void recompute_total() { total = combine(recon, kl_z1, kl_z2, logp_mu2_scaled, disc, alpha); }

	/// Same as `total` with the discriminative term removed.
	double segment_bound() const { return combine(recon, kl_z1, kl_z2, logp_mu2_scaled, 0.0, 0.0); }
};

/// Standard-normal noise for one reparameterized draw per segment. In VAE
/// mode only `z2` is used (as the noise of z).
struct Noise {
	Matrix z1;
	Matrix z2;

	static Noise draw(std::mt19937_64& rng, int dim_z1, int dim_z2, Eigen::Index batch) {
		std::normal_distribution<double> n01(0.0, 1.0);
		Noise n{Matrix(dim_z1, batch), Matrix(dim_z2, batch)};
		for (Eigen::Index k = 0; k < n.z1.size(); ++k) n.z1.data()[k] = n01(rng);
		for (Eigen::Index k = 0; k < n.z2.size(); ++k) n.z2.data()[k] = n01(rng);
		return n;
	}
	static Noise zeros(int dim_z1, int dim_z2, Eigen::Index batch) {
		return {Matrix::Zero(dim_z1, batch), Matrix::Zero(dim_z2, batch)};
	}
};

/// Gradient buffers shaped like the trainable state.
struct Gradients {
	ModelParams params;
	Matrix table;

	Gradients() = default;
	Gradients(const ModelParams& p, const SVectorTable* t)
		: params(p.latent, p.arch), table(t ? Matrix::Zero(t->size(), t->dim()) : Matrix()) {}

	void set_zero() {
		nn::set_zero(params);
		table.setZero();
	}
};

struct BatchEvaluation {
	std::vector<LossBreakdown> per_segment;
	LossBreakdown mean;
};

namespace detail {

inline void check_finite_term(const Vector& v, const char* term) {
	if (!v.allFinite()) throw NumericError(term, "segment bound");
}

/// Column-wise sum over dims of log N(x | mean, exp(logvar)).
inline Vector log_prob_columns(const Matrix& x, const Matrix& mean, const Matrix& logvar) {
	return (-0.5 * kLogTwoPi - 0.5 * logvar.array() - 0.5 * (x - mean).array().square() * (-logvar.array()).exp())
		.colwise()
		.sum()
		.transpose();
}

/// Column-wise KL(N(mean, exp(logvar)) || N(prior_mean, prior_var I)).
inline Vector kl_columns(const Matrix& mean, const Matrix& logvar, const Matrix& prior_mean, double prior_var) {
	const double lp = std::log(prior_var);
	const auto r = logvar.array() - lp;
	return (0.5 * ((r.exp() - 1.0 - r).max(0.0) + (mean - prior_mean).array().square() / prior_var))
		.colwise()
		.sum()
		.transpose();
}

inline void check_batch(const ModelParams& p, const Matrix& x, const char* what) {
	if (x.rows() != p.latent.frame_size())
		throw InputContractError(std::string(what) + ": window size mismatch");
	if (x.cols() < 1) throw InputContractError(std::string(what) + ": empty batch");
	require_finite(x, what);
}

inline void check_noise(const Matrix& n, Eigen::Index rows, Eigen::Index cols, const char* what) {
	if (n.rows() != rows || n.cols() != cols) throw InputContractError(std::string(what) + ": noise shape mismatch");
}

} // namespace detail

/// Log-softmax over all table rows of log N(z2 | row_j, var_z2 I), read at row i.
inline double discriminative_logprob(const Vector& z2, Eigen::Index i, const SVectorTable& table,
									 const LatentConfig& config) {
	if (table.size() == 0) throw InputContractError("discriminative_logprob: empty table");
	table.check_index(i);
	if (z2.size() != table.dim()) throw InputContractError("discriminative_logprob: z2 length mismatch");
	const Vector scores =
		-0.5 * (table.rows().rowwise() - z2.transpose()).rowwise().squaredNorm() / config.var_z2;
	const double mx = scores.maxCoeff();
	return scores[i] - (mx + std::log((scores.array() - mx).exp().sum()));
}

/// Evaluates the FHVAE bound for a batch of windows with one reparameterized
/// draw per segment. Prior means come from the table rows `seq`, or from the
/// columns of `mu2_override` (dim_z2 x B) when given, in which case the
/// discriminative term is not evaluated. If `grad` is non-null, the gradient
/// of the mean negative bound (-1/B * sum of totals) is accumulated into it.
inline BatchEvaluation evaluate_fhvae_batch(const ModelParams& p, const SVectorTable& table, const Matrix& x,
											std::span<const Eigen::Index> seq, std::span<const double> seg_count,
											const Noise& noise, double alpha, Gradients* grad = nullptr,
											const Matrix* mu2_override = nullptr) {
	if (p.mode() != ModelMode::FHVAE) throw InputContractError("FHVAE bound requested on a VAE model");
	if (alpha < 0) throw InputContractError("alpha must be >= 0");
	detail::check_batch(p, x, "segment_lower_bound");
	const Eigen::Index B = x.cols();
	const LatentConfig& lc = p.latent;
	if (Eigen::Index(seg_count.size()) != B) throw InputContractError("segment_lower_bound: seg_count size mismatch");
	detail::check_noise(noise.z1, lc.dim_z1, B, "segment_lower_bound");
	detail::check_noise(noise.z2, lc.dim_z2, B, "segment_lower_bound");
	const bool use_table = mu2_override == nullptr;

	Matrix mu2(lc.dim_z2, B);
	if (use_table) {
		if (Eigen::Index(seq.size()) != B) throw InputContractError("segment_lower_bound: seq size mismatch");
		if (table.dim() != lc.dim_z2) throw InputContractError("segment_lower_bound: table dim mismatch");
		for (Eigen::Index b = 0; b < B; ++b) {
			table.check_index(seq[b]);
			mu2.col(b) = table.rows().row(seq[b]).transpose();
		}
	} else {
		if (mu2_override->rows() != lc.dim_z2 || mu2_override->cols() != B)
			throw InputContractError("segment_lower_bound: mu2 override shape mismatch");
		mu2 = *mu2_override;
	}
	for (double n : seg_count)
		if (!(n >= 1)) throw InputContractError("segment_lower_bound: seg_count must be >= 1");

	// q(z2|x) and z2 sample
	auto c2 = p.enc_z2.forward(x, nullptr);
	const Matrix std2 = (0.5 * c2.logvar.array()).exp().matrix();
	const Matrix z2 = c2.mean + (std2.array() * noise.z2.array()).matrix();
	// q(z1|x,z2) and z1 sample
	auto c1 = p.enc_z1.forward(x, &z2);
	const Matrix std1 = (0.5 * c1.logvar.array()).exp().matrix();
	const Matrix z1 = c1.mean + (std1.array() * noise.z1.array()).matrix();
	// p(x|z1,z2)
	Matrix z(lc.dim_z1 + lc.dim_z2, B);
	z.topRows(lc.dim_z1) = z1;
	z.bottomRows(lc.dim_z2) = z2;
	auto cd = p.dec.forward(z);

	const Vector recon = detail::log_prob_columns(x, cd.mean, cd.logvar);
	const Vector kl1 = detail::kl_columns(c1.mean, c1.logvar, Matrix::Zero(lc.dim_z1, B), lc.var_z1);
	const Vector kl2 = detail::kl_columns(c2.mean, c2.logvar, mu2, lc.var_z2);
	const Vector inv_n = Eigen::Map<const Vector>(seg_count.data(), B).cwiseInverse();
	const Vector lp_mu2 =
		(detail::log_prob_columns(mu2, Matrix::Zero(lc.dim_z2, B), Matrix::Constant(lc.dim_z2, B, std::log(lc.var_mu2)))
			 .array() *
		 inv_n.array())
			.matrix();
	detail::check_finite_term(recon, "recon");
	detail::check_finite_term(kl1, "kl_z1");
	detail::check_finite_term(kl2, "kl_z2");
	detail::check_finite_term(lp_mu2, "logp_mu2_scaled");

	Vector disc = Vector::Zero(B);
	Matrix probs; // M x B softmax over table rows
	if (use_table) {
		const Matrix& T = table.rows();
		Matrix scores = T * z2; // M x B
		scores *= 2.0;
		scores.colwise() -= T.rowwise().squaredNorm();
		scores.rowwise() -= z2.colwise().squaredNorm();
		scores *= 0.5 / lc.var_z2;
		probs.resize(scores.rows(), B);
		for (Eigen::Index b = 0; b < B; ++b) {
			const double mx = scores.col(b).maxCoeff();
			const double lse = mx + std::log((scores.col(b).array() - mx).exp().sum());
			disc[b] = scores(seq[b], b) - lse;
			probs.col(b) = (scores.col(b).array() - lse).exp().matrix();
		}
		detail::check_finite_term(disc, "disc");
	}

	BatchEvaluation ev;
	ev.per_segment.resize(B);
	LossBreakdown& m = ev.mean;
	m.alpha = alpha;
	for (Eigen::Index b = 0; b < B; ++b) {
		LossBreakdown& s = ev.per_segment[b];
		s = {recon[b], kl1[b], kl2[b], lp_mu2[b], disc[b], 0.0, alpha};
		s.recompute_total();
		m.recon += s.recon;
		m.kl_z1 += s.kl_z1;
		m.kl_z2 += s.kl_z2;
		m.logp_mu2_scaled += s.logp_mu2_scaled;
		m.disc += s.disc;
	}
	const double inv_b = 1.0 / double(B);
	m.recon *= inv_b;
	m.kl_z1 *= inv_b;
	m.kl_z2 *= inv_b;
	m.logp_mu2_scaled *= inv_b;
	m.disc *= inv_b;
	m.recompute_total();
	if (!std::isfinite(m.total)) throw NumericError("total", "batch mean");

	if (grad == nullptr) return ev;

	// Backward pass for loss = -1/B * sum_b total_b.
	const double w = -inv_b;
	const Matrix inv_var_x = (-cd.logvar.array()).exp().matrix();
	const Matrix diff_x = x - cd.mean;
	Matrix d_xmean = w * (diff_x.array() * inv_var_x.array()).matrix();
	Matrix d_xlogvar = w * (-0.5 + 0.5 * diff_x.array().square() * inv_var_x.array()).matrix();
	Matrix dz = p.dec.backward(cd, d_xmean, d_xlogvar, grad->params.dec);
	Matrix dz1 = dz.topRows(lc.dim_z1);
	Matrix dz2 = dz.bottomRows(lc.dim_z2);

	// -kl_z1
	Matrix dm1 = -w * c1.mean / lc.var_z1;
	Matrix dlv1 = -w * (0.5 * ((c1.logvar.array() - std::log(lc.var_z1)).exp() - 1.0)).matrix();
	dm1 += dz1;
	dlv1 += (dz1.array() * noise.z1.array() * 0.5 * std1.array()).matrix();
	dz2 += p.enc_z1.backward(c1, dm1, dlv1, grad->params.enc_z1);

	// -kl_z2
	Matrix dmu2 = w * (c2.mean - mu2) / lc.var_z2;
	Matrix dm2 = -w * (c2.mean - mu2) / lc.var_z2;
	Matrix dlv2 = -w * (0.5 * ((c2.logvar.array() - std::log(lc.var_z2)).exp() - 1.0)).matrix();
	// + logp_mu2_scaled
	dmu2 += w * (-(mu2.array().rowwise() * inv_n.transpose().array()) / lc.var_mu2).matrix();

	if (use_table) {
		// alpha * disc
		const Matrix& T = table.rows();
		Matrix ds = -probs;
		for (Eigen::Index b = 0; b < B; ++b) ds(seq[b], b) += 1.0;
		ds *= w * alpha;
		dz2 += (T.transpose() * ds) / lc.var_z2;
		grad->table += (ds * z2.transpose() - (ds.rowwise().sum().asDiagonal() * T)) / lc.var_z2;
		for (Eigen::Index b = 0; b < B; ++b) grad->table.row(seq[b]) += dmu2.col(b).transpose();
	}

	dm2 += dz2;
	dlv2 += (dz2.array() * noise.z2.array() * 0.5 * std2.array()).matrix();
	p.enc_z2.backward(c2, dm2, dlv2, grad->params.enc_z2);
	return ev;
}

/// Vanilla-VAE ELBO for a batch; kl_z1 carries KL(q(z|x) || N(0, I)).
inline BatchEvaluation evaluate_vae_batch(const ModelParams& p, const Matrix& x, const Matrix& noise,
										  Gradients* grad = nullptr) {
	if (p.mode() != ModelMode::VAE) throw InputContractError("vae_elbo: model is not in VAE mode");
	detail::check_batch(p, x, "vae_elbo");
	const Eigen::Index B = x.cols();
	const int dz = p.latent.dim_z_vae;
	detail::check_noise(noise, dz, B, "vae_elbo");

	auto ce = p.enc_z2.forward(x, nullptr);
	const Matrix sd = (0.5 * ce.logvar.array()).exp().matrix();
	const Matrix z = ce.mean + (sd.array() * noise.array()).matrix();
	auto cd = p.dec.forward(z);
	const Vector recon = detail::log_prob_columns(x, cd.mean, cd.logvar);
	const Vector kl = detail::kl_columns(ce.mean, ce.logvar, Matrix::Zero(dz, B), 1.0);
	detail::check_finite_term(recon, "recon");
	detail::check_finite_term(kl, "kl_z");

	BatchEvaluation ev;
	ev.per_segment.resize(B);
	for (Eigen::Index b = 0; b < B; ++b) {
		LossBreakdown& s = ev.per_segment[b];
		s.recon = recon[b];
		s.kl_z1 = kl[b];
		s.recompute_total();
	}
	const double inv_b = 1.0 / double(B);
	ev.mean.recon = recon.sum() * inv_b;
	ev.mean.kl_z1 = kl.sum() * inv_b;
	ev.mean.recompute_total();
	if (grad == nullptr) return ev;

	const double w = -inv_b;
	const Matrix inv_var_x = (-cd.logvar.array()).exp().matrix();
	const Matrix diff_x = x - cd.mean;
	Matrix d_xmean = w * (diff_x.array() * inv_var_x.array()).matrix();
	Matrix d_xlogvar = w * (-0.5 + 0.5 * diff_x.array().square() * inv_var_x.array()).matrix();
	Matrix dzv = p.dec.backward(cd, d_xmean, d_xlogvar, grad->params.dec);
	Matrix dm = -w * ce.mean + dzv;
	Matrix dlv = -w * (0.5 * (ce.logvar.array().exp() - 1.0)).matrix();
	dlv += (dzv.array() * noise.array() * 0.5 * sd.array()).matrix();
	p.enc_z2.backward(ce, dm, dlv, grad->params.enc_z2);
	return ev;
}

/// Single-window segment lower bound L with the discriminative term zeroed.
inline LossBreakdown segment_lower_bound(const Matrix& x, Eigen::Index i, const ModelParams& p,
										 const SVectorTable& table, double seg_count, const Vector& noise_z1,
										 const Vector& noise_z2) {
	Matrix col = detail::window_column(x, p.latent, "segment_lower_bound");
	const Eigen::Index seq[1] = {i};
	const double n[1] = {seg_count};
	Noise noise{noise_z1, noise_z2};
	LossBreakdown lb = evaluate_fhvae_batch(p, table, col, seq, n, noise, 0.0).per_segment[0];
	lb.disc = 0.0;
	lb.alpha = 0.0;
	lb.recompute_total();
	return lb;
}

/// Single-window L + alpha * log p(i | z2), both at the same z2 draw.
inline LossBreakdown dis_lower_bound(const Matrix& x, Eigen::Index i, const ModelParams& p, const SVectorTable& table,
									 double seg_count, double alpha, const Vector& noise_z1, const Vector& noise_z2) {
	Matrix col = detail::window_column(x, p.latent, "dis_lower_bound");
	const Eigen::Index seq[1] = {i};
	const double n[1] = {seg_count};
	Noise noise{noise_z1, noise_z2};
	return evaluate_fhvae_batch(p, table, col, seq, n, noise, alpha).per_segment[0];
}

inline LossBreakdown vae_elbo(const Matrix& x, const ModelParams& p, const Vector& noise) {
	if (p.mode() != ModelMode::VAE) throw InputContractError("vae_elbo: model is not in VAE mode");
	Matrix col = detail::window_column(x, p.latent, "vae_elbo");
	return evaluate_vae_batch(p, col, noise).per_segment[0];
}

} // namespace fhvae
