#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "fhvae/config.hpp"
#include "fhvae/gaussian.hpp"
#include "fhvae/nn.hpp"

namespace fhvae {

/// Scale of the uniform initializer for weight matrices. Biases start at zero.
inline constexpr double kInitScale = 0.05;

namespace detail {

inline Matrix clamp_logvar(const Matrix& raw) { return raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax); }

/// Zeroes gradient entries whose raw log-variance was clamped.
inline Matrix clamp_logvar_grad(const Matrix& raw, const Matrix& dlogvar) {
	return ((raw.array() >= kLogVarMin) && (raw.array() <= kLogVarMax)).select(dlogvar, 0.0);
}

template <class M>
void weights_uniform(M& m, std::mt19937_64& rng) {
	std::uniform_real_distribution<double> dist(-kInitScale, kInitScale);
	auto fill = [&](Matrix& w) {
		for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = dist(rng);
	};
	if constexpr (std::is_same_v<M, nn::Dense>) {
		fill(m.weight);
	} else if constexpr (std::is_same_v<M, nn::Mlp>) {
		for (auto& l : m.layers) fill(l.weight);
	} else if constexpr (std::is_same_v<M, nn::Lstm>) {
		for (auto& l : m.layers) {
			fill(l.wx);
			fill(l.wh);
		}
		for (auto& d : m.init) fill(d.weight);
	}
}

} // namespace detail

/// Gaussian posterior network over a window of W frames, optionally
/// conditioned on a vector appended to every frame (recurrent) or to the
/// flattened window (feedforward).
class Encoder {
public:
	Encoder() = default;
	Encoder(const ArchConfig& arch, int width, int frame_dim, int cond_dim, int latent_dim)
		: cell_(arch.cell), width_(width), frame_dim_(frame_dim), cond_dim_(cond_dim) {
		if (cell_ == CellType::Recurrent)
			lstm_ = nn::Lstm(frame_dim + cond_dim, arch.units, arch.layers);
		else
			mlp_ = nn::Mlp(width * frame_dim + cond_dim, arch.units, arch.layers);
		mean_ = nn::Dense(arch.units, latent_dim);
		logvar_ = nn::Dense(arch.units, latent_dim);
	}

	int latent_dim() const { return static_cast<int>(mean_.out()); }
	int cond_dim() const { return cond_dim_; }

	nn::Dense& mean_head() { return mean_; }
	nn::Dense& logvar_head() { return logvar_; }
	const nn::Dense& mean_head() const { return mean_; }
	const nn::Dense& logvar_head() const { return logvar_; }

	struct Cache {
		nn::Lstm::Cache lstm;
		nn::Mlp::Cache mlp;
		Matrix hidden;
		Matrix mean;
		Matrix logvar_raw;
		Matrix logvar;
	};

	/// `x` is (W*D) x B with frames stacked row-major; `cond` is cond_dim x B.
	Cache forward(const Matrix& x, const Matrix* cond) const {
		Cache c;
		const Eigen::Index batch = x.cols();
		if (cell_ == CellType::Recurrent) {
			std::vector<Matrix> steps;
			steps.reserve(width_);
			for (int t = 0; t < width_; ++t) {
				Matrix s(frame_dim_ + cond_dim_, batch);
				s.topRows(frame_dim_) = x.middleRows(Eigen::Index(t) * frame_dim_, frame_dim_);
				if (cond_dim_ > 0) s.bottomRows(cond_dim_) = *cond;
				steps.push_back(std::move(s));
			}
			c.lstm = lstm_.forward(steps);
			c.hidden = c.lstm.layers.back().h.back();
		} else {
			Matrix in(x.rows() + cond_dim_, batch);
			in.topRows(x.rows()) = x;
			if (cond_dim_ > 0) in.bottomRows(cond_dim_) = *cond;
			c.mlp = mlp_.forward(in);
			c.hidden = c.mlp.output;
		}
		c.mean = mean_.forward(c.hidden);
		c.logvar_raw = logvar_.forward(c.hidden);
		c.logvar = detail::clamp_logvar(c.logvar_raw);
		return c;
	}

	/// Accumulates parameter gradients; returns dL/dcond (empty when unconditioned).
	Matrix backward(const Cache& c, const Matrix& dmean, const Matrix& dlogvar, Encoder& grad) const {
		Matrix dhidden = mean_.backward(c.hidden, dmean, grad.mean_);
		dhidden += logvar_.backward(c.hidden, detail::clamp_logvar_grad(c.logvar_raw, dlogvar), grad.logvar_);
		const Eigen::Index batch = dmean.cols();
		Matrix dcond;
		if (cond_dim_ > 0) dcond = Matrix::Zero(cond_dim_, batch);
		if (cell_ == CellType::Recurrent) {
			const Eigen::Index H = dhidden.rows();
			std::vector<Matrix> dh(width_, Matrix::Zero(H, batch));
			dh.back() = std::move(dhidden);
			auto dsteps = lstm_.backward(c.lstm, std::move(dh), grad.lstm_);
			if (cond_dim_ > 0)
				for (const auto& ds : dsteps) dcond += ds.bottomRows(cond_dim_);
		} else {
			Matrix din = mlp_.backward(c.mlp, dhidden, grad.mlp_);
			if (cond_dim_ > 0) dcond = din.bottomRows(cond_dim_);
		}
		return dcond;
	}

	void init_weights(std::mt19937_64& rng) {
		if (cell_ == CellType::Recurrent)
			detail::weights_uniform(lstm_, rng);
		else
			detail::weights_uniform(mlp_, rng);
		detail::weights_uniform(mean_, rng);
		detail::weights_uniform(logvar_, rng);
	}

	template <class F>
	void visit(F&& f) {
		lstm_.visit(f);
		mlp_.visit(f);
		mean_.visit(f);
		logvar_.visit(f);
	}
	template <class F>
	void visit(F&& f) const {
		lstm_.visit(f);
		mlp_.visit(f);
		mean_.visit(f);
		logvar_.visit(f);
	}

private:
	CellType cell_ = CellType::Recurrent;
	int width_ = 0;
	int frame_dim_ = 0;
	int cond_dim_ = 0;
	nn::Lstm lstm_;
	nn::Mlp mlp_;
	nn::Dense mean_;
	nn::Dense logvar_;
};

/// Gaussian likelihood p(x | z) over a flattened W x D window. The recurrent
/// variant sets every layer's initial hidden state from z and also feeds z
/// as the input at each step; per-step heads emit one frame each.
class Decoder {
public:
	Decoder() = default;
	Decoder(const ArchConfig& arch, int width, int frame_dim, int latent_dim)
		: cell_(arch.cell), width_(width), frame_dim_(frame_dim) {
		if (cell_ == CellType::Recurrent) {
			lstm_ = nn::Lstm(latent_dim, arch.units, arch.layers, latent_dim);
			mean_ = nn::Dense(arch.units, frame_dim);
			logvar_ = nn::Dense(arch.units, frame_dim);
		} else {
			mlp_ = nn::Mlp(latent_dim, arch.units, arch.layers);
			mean_ = nn::Dense(arch.units, width * frame_dim);
			logvar_ = nn::Dense(arch.units, width * frame_dim);
		}
	}

	struct Cache {
		nn::Lstm::Cache lstm;
		nn::Mlp::Cache mlp;
		Matrix mean;
		Matrix logvar_raw;
		Matrix logvar;
	};

	Cache forward(const Matrix& z) const {
		Cache c;
		const Eigen::Index batch = z.cols();
		if (cell_ == CellType::Recurrent) {
			std::vector<Matrix> steps(width_, z);
			c.lstm = lstm_.forward(steps, &z);
			c.mean.resize(Eigen::Index(width_) * frame_dim_, batch);
			c.logvar_raw.resize(Eigen::Index(width_) * frame_dim_, batch);
			const auto& hs = c.lstm.layers.back().h;
			for (int t = 0; t < width_; ++t) {
				c.mean.middleRows(Eigen::Index(t) * frame_dim_, frame_dim_) = mean_.forward(hs[t]);
				c.logvar_raw.middleRows(Eigen::Index(t) * frame_dim_, frame_dim_) = logvar_.forward(hs[t]);
			}
		} else {
			c.mlp = mlp_.forward(z);
			c.mean = mean_.forward(c.mlp.output);
			c.logvar_raw = logvar_.forward(c.mlp.output);
		}
		c.logvar = detail::clamp_logvar(c.logvar_raw);
		return c;
	}

	/// Returns dL/dz.
	Matrix backward(const Cache& c, const Matrix& dmean, const Matrix& dlogvar, Decoder& grad) const {
		Matrix dlv = detail::clamp_logvar_grad(c.logvar_raw, dlogvar);
		if (cell_ == CellType::Recurrent) {
			const auto& hs = c.lstm.layers.back().h;
			std::vector<Matrix> dh(width_);
			for (int t = 0; t < width_; ++t) {
				const Eigen::Index r = Eigen::Index(t) * frame_dim_;
				dh[t] = mean_.backward(hs[t], dmean.middleRows(r, frame_dim_), grad.mean_);
				dh[t] += logvar_.backward(hs[t], dlv.middleRows(r, frame_dim_), grad.logvar_);
			}
			Matrix dz = Matrix::Zero(c.lstm.init_input.rows(), c.lstm.init_input.cols());
			auto dsteps = lstm_.backward(c.lstm, std::move(dh), grad.lstm_, &dz);
			for (const auto& ds : dsteps) dz += ds;
			return dz;
		}
		Matrix dhidden = mean_.backward(c.mlp.output, dmean, grad.mean_);
		dhidden += logvar_.backward(c.mlp.output, dlv, grad.logvar_);
		return mlp_.backward(c.mlp, dhidden, grad.mlp_);
	}

	void init_weights(std::mt19937_64& rng) {
		if (cell_ == CellType::Recurrent)
			detail::weights_uniform(lstm_, rng);
		else
			detail::weights_uniform(mlp_, rng);
		detail::weights_uniform(mean_, rng);
		detail::weights_uniform(logvar_, rng);
	}

	template <class F>
	void visit(F&& f) {
		lstm_.visit(f);
		mlp_.visit(f);
		mean_.visit(f);
		logvar_.visit(f);
	}
	template <class F>
	void visit(F&& f) const {
		lstm_.visit(f);
		mlp_.visit(f);
		mean_.visit(f);
		logvar_.visit(f);
	}

private:
	CellType cell_ = CellType::Recurrent;
	int width_ = 0;
	int frame_dim_ = 0;
	nn::Lstm lstm_;
	nn::Mlp mlp_;
	nn::Dense mean_;
	nn::Dense logvar_;
};

/// All encoder/decoder parameters. In VAE mode `enc_z2` is the single q(z|x)
/// encoder over `dim_z_vae` and `enc_z1` is empty.
struct ModelParams {
	LatentConfig latent;
	ArchConfig arch;
	Encoder enc_z2;
	Encoder enc_z1;
	Decoder dec;

	ModelParams() = default;

	/// Builds zero-valued parameters of the right shapes.
	ModelParams(const LatentConfig& lc, const ArchConfig& ac) : latent(lc), arch(ac) {
		lc.validate();
		ac.validate();
		const int W = lc.input_width;
		const int D = lc.input_dim;
		if (ac.mode == ModelMode::FHVAE) {
			enc_z2 = Encoder(ac, W, D, 0, lc.dim_z2);
			enc_z1 = Encoder(ac, W, D, lc.dim_z2, lc.dim_z1);
			dec = Decoder(ac, W, D, lc.dim_z1 + lc.dim_z2);
		} else {
			enc_z2 = Encoder(ac, W, D, 0, lc.dim_z_vae);
			dec = Decoder(ac, W, D, lc.dim_z_vae);
		}
	}

	/// Weights U(-0.05, 0.05) from `seed`, biases zero.
	static ModelParams initialized(const LatentConfig& lc, const ArchConfig& ac, std::uint64_t seed) {
		ModelParams p(lc, ac);
		std::mt19937_64 rng(seed);
		p.enc_z2.init_weights(rng);
		if (ac.mode == ModelMode::FHVAE) p.enc_z1.init_weights(rng);
		p.dec.init_weights(rng);
		return p;
	}

	ModelMode mode() const { return arch.mode; }

	template <class F>
	void visit(F&& f) {
		enc_z2.visit(f);
		enc_z1.visit(f);
		dec.visit(f);
	}
	template <class F>
	void visit(F&& f) const {
		enc_z2.visit(f);
		enc_z1.visit(f);
		dec.visit(f);
	}
};

/// Trainable per-training-sequence posterior means of mu2 (the s-vectors).
class SVectorTable {
public:
	SVectorTable() = default;
	SVectorTable(std::vector<std::string> ids, int dim) : rows_(Matrix::Zero(Eigen::Index(ids.size()), dim)) {
		if (dim < 1) throw InputContractError("SVectorTable: dim must be >= 1");
		set_ids(std::move(ids));
	}

	Eigen::Index size() const { return rows_.rows(); }
	Eigen::Index dim() const { return rows_.cols(); }
	const std::vector<std::string>& ids() const { return ids_; }

	const Matrix& rows() const { return rows_; }
	Matrix& rows() { return rows_; }

	Vector lookup(Eigen::Index i) const {
		check_index(i);
		return rows_.row(i).transpose();
	}

	void set_row(Eigen::Index i, const Vector& v) {
		check_index(i);
		if (v.size() != dim()) throw InputContractError("SVectorTable::set_row: length mismatch");
		rows_.row(i) = v.transpose();
	}

	/// Row of an external sequence id, or -1.
	Eigen::Index find(const std::string& id) const {
		auto it = index_.find(id);
		return it == index_.end() ? -1 : it->second;
	}

	void check_index(Eigen::Index i) const {
		if (i < 0 || i >= size())
			throw InputContractError("SVectorTable: index " + std::to_string(i) + " out of range (M=" +
									 std::to_string(size()) + ")");
	}

	void set_ids(std::vector<std::string> ids) {
		if (Eigen::Index(ids.size()) != rows_.rows()) throw InputContractError("SVectorTable: id count mismatch");
		ids_ = std::move(ids);
		index_.clear();
		for (std::size_t k = 0; k < ids_.size(); ++k) {
			if (!index_.emplace(ids_[k], Eigen::Index(k)).second)
				throw InputContractError("SVectorTable: duplicate sequence id '" + ids_[k] + "'");
		}
	}

private:
	Matrix rows_;
	std::vector<std::string> ids_;
	std::unordered_map<std::string, Eigen::Index> index_;
};

inline Vector lookup_mu2(Eigen::Index i, const SVectorTable& table) { return table.lookup(i); }

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
	if (!m.allFinite()) throw InputContractError(std::string(what) + ": non-finite input");
}

/// Flattens a W x D frame window into a (W*D) x 1 column, frame-major.
inline Matrix window_column(const Matrix& x, const LatentConfig& lc, const char* what) {
	if (x.rows() != lc.input_width || x.cols() != lc.input_dim)
		throw InputContractError(std::string(what) + ": expected " + std::to_string(lc.input_width) + "x" +
								 std::to_string(lc.input_dim) + " window, got " + std::to_string(x.rows()) + "x" +
								 std::to_string(x.cols()));
	require_finite(x, what);
	Matrix col(lc.frame_size(), 1);
	for (int t = 0; t < lc.input_width; ++t) col.middleRows(Eigen::Index(t) * lc.input_dim, lc.input_dim) = x.row(t).transpose();
	return col;
}

inline DiagGaussian column_gaussian(const Matrix& mean, const Matrix& logvar) {
	return {mean.col(0), logvar.col(0)};
}

} // namespace detail

/// q(z2 | x) for one W x D window; in VAE mode this is q(z | x).
inline DiagGaussian encode_z2(const Matrix& x, const ModelParams& p) {
	Matrix col = detail::window_column(x, p.latent, "encode_z2");
	auto c = p.enc_z2.forward(col, nullptr);
	return detail::column_gaussian(c.mean, c.logvar);
}

/// q(z1 | x, z2) for one window.
inline DiagGaussian encode_z1(const Matrix& x, const Vector& z2, const ModelParams& p) {
	if (p.mode() != ModelMode::FHVAE) throw InputContractError("encode_z1: model is not in FHVAE mode");
	Matrix col = detail::window_column(x, p.latent, "encode_z1");
	if (z2.size() != p.latent.dim_z2) throw InputContractError("encode_z1: z2 length mismatch");
	if (!z2.allFinite()) throw InputContractError("encode_z1: non-finite z2");
	Matrix cond = z2;
	auto c = p.enc_z1.forward(col, &cond);
	return detail::column_gaussian(c.mean, c.logvar);
}

/// p(x | z1, z2) as a Gaussian over the flattened W*D window.
inline DiagGaussian decode(const Vector& z1, const Vector& z2, const ModelParams& p) {
	if (p.mode() != ModelMode::FHVAE) throw InputContractError("decode: model is not in FHVAE mode");
	if (z1.size() != p.latent.dim_z1) throw InputContractError("decode: z1 length mismatch");
	if (z2.size() != p.latent.dim_z2) throw InputContractError("decode: z2 length mismatch");
	Matrix z(z1.size() + z2.size(), 1);
	z << z1, z2;
	auto c = p.dec.forward(z);
	return detail::column_gaussian(c.mean, c.logvar);
}

/// p(x | z) of the VAE baseline.
inline DiagGaussian decode_vae(const Vector& z, const ModelParams& p) {
	if (p.mode() != ModelMode::VAE) throw InputContractError("decode_vae: model is not in VAE mode");
	if (z.size() != p.latent.dim_z_vae) throw InputContractError("decode_vae: z length mismatch");
	auto c = p.dec.forward(z);
	return detail::column_gaussian(c.mean, c.logvar);
}

} // namespace fhvae
