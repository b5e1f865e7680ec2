#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhvae/checkpoint.hpp"
#include "fhvae/data.hpp"
#include "fhvae/extraction.hpp"
#include "fhvae/objective.hpp"

namespace fhvae {

struct TrainConfig {
	int batch_size = 128;
	double lr = 1e-3;
	double adam_beta1 = 0.95;
	double adam_beta2 = 0.999;
	double adam_eps = 1e-8;
	double l2_weight = 1e-4;
	int patience_epochs = 50;
	double alpha = 10.0;
	std::uint64_t seed = 0;
	int max_epochs = 500;
	/// Seed of the fixed noise used to score the dev set.
	std::uint64_t eval_seed = 12345;

	void validate() const {
		if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
		if (!(lr >= 0)) throw ConfigError("lr must be >= 0");
		if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
			throw ConfigError("adam betas must be in [0, 1)");
		if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
		if (!(l2_weight >= 0)) throw ConfigError("l2_weight must be >= 0");
		if (patience_epochs < 1) throw ConfigError("patience_epochs must be >= 1");
		if (!(alpha >= 0)) throw ConfigError("alpha must be >= 0");
		if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
	}
};

/// A window of `width` frames taken from utterance `utt` at `start`.
struct SegmentRef {
	std::size_t utt = 0;
	Eigen::Index start = 0;
};

/// Minibatch of windows. `seg_count[b]` is N of the sequence window b belongs to.
struct SegmentBatch {
	Matrix data; // (W*D) x B
	std::vector<Eigen::Index> seq_index;
	std::vector<double> seg_count;
	std::vector<SegmentRef> refs;

	Eigen::Index size() const { return data.cols(); }
};

/// Segments scheduled for one epoch, already shuffled.
struct EpochSchedule {
	std::vector<SegmentRef> segments;
	std::vector<double> seq_counts; // N per sequence
};

/// Number of windows an utterance contributes per epoch.
inline Eigen::Index segments_per_epoch(Eigen::Index frames, int width) {
	return std::max<Eigen::Index>(1, frames / width);
}

/// Each utterance contributes max(1, floor(T/W)) windows at uniform random
/// offsets; the result is shuffled globally.
inline EpochSchedule schedule_epoch(const Dataset& ds, std::mt19937_64& rng, int width) {
	EpochSchedule s;
	s.seq_counts.assign(std::size_t(ds.num_sequences()), 0.0);
	for (std::size_t u = 0; u < ds.size(); ++u) {
		const Eigen::Index T = ds.utterances[u].num_frames();
		if (T < width)
			throw DataError("utterance '" + ds.utterances[u].id + "' has " + std::to_string(T) +
							" frames, fewer than the window width " + std::to_string(width));
		const Eigen::Index n = segments_per_epoch(T, width);
		std::uniform_int_distribution<Eigen::Index> start(0, T - width);
		for (Eigen::Index k = 0; k < n; ++k) s.segments.push_back({u, start(rng)});
		s.seq_counts[std::size_t(ds.seq_of_utt[u])] += double(n);
	}
	std::shuffle(s.segments.begin(), s.segments.end(), rng);
	return s;
}

inline SegmentBatch make_batch(const Dataset& ds, const EpochSchedule& s, std::size_t begin, std::size_t end,
							   int width) {
	SegmentBatch b;
	const Eigen::Index D = ds.utterances.front().dim();
	b.data.resize(Eigen::Index(width) * D, Eigen::Index(end - begin));
	for (std::size_t k = begin; k < end; ++k) {
		const SegmentRef& r = s.segments[k];
		const Matrix& f = ds.utterances[r.utt].frames;
		for (int t = 0; t < width; ++t)
			b.data.block(Eigen::Index(t) * D, Eigen::Index(k - begin), D, 1) = f.row(r.start + t).transpose();
		const Eigen::Index seq = ds.seq_of_utt[r.utt];
		b.seq_index.push_back(seq);
		b.seg_count.push_back(s.seq_counts[std::size_t(seq)]);
		b.refs.push_back(r);
	}
	return b;
}

/// One epoch of minibatches; the last batch may be short.
inline std::vector<SegmentBatch> sample_segment_batches(const Dataset& ds, std::mt19937_64& rng, int width,
														int batch_size) {
	if (ds.empty()) throw DataError("sample_segment_batches: empty dataset");
	const EpochSchedule s = schedule_epoch(ds, rng, width);
	std::vector<SegmentBatch> out;
	for (std::size_t b = 0; b < s.segments.size(); b += std::size_t(batch_size))
		out.push_back(make_batch(ds, s, b, std::min(s.segments.size(), b + std::size_t(batch_size)), width));
	return out;
}

/// Adam moments for the model and lazily-updated moments for table rows.
struct TrainState {
	int epoch = 0;
	std::int64_t step = 0;
	std::vector<std::vector<double>> m;
	std::vector<std::vector<double>> v;
	Matrix table_m;
	Matrix table_v;
	double best_dev = -std::numeric_limits<double>::infinity();
	int epochs_since_improvement = 0;
	std::mt19937_64 rng;

	TrainState() = default;
	TrainState(const ModelParams& p, const SVectorTable& table, std::uint64_t seed) : rng(seed) {
		p.visit([&](nn::ParamSpan s) {
			m.emplace_back(s.size(), 0.0);
			v.emplace_back(s.size(), 0.0);
		});
		table_m = Matrix::Zero(table.size(), table.dim());
		table_v = Matrix::Zero(table.size(), table.dim());
	}
};

struct StepResult {
	LossBreakdown bound; // batch mean, before the update
	double loss = 0.0;   // -bound.total + l2
};

inline double l2_norm_squared(const ModelParams& p) {
	double s = 0.0;
	p.visit([&](nn::ParamSpan sp) {
		for (double x : sp) s += x * x;
	});
	return s;
}

/// One Adam step on mean(-bound) + l2 * |params|^2. The table is not
/// regularized and only rows referenced by the batch are updated.
inline StepResult train_step(const SegmentBatch& batch, ModelParams& params, SVectorTable& table, TrainState& state,
							 const TrainConfig& cfg) {
	const LatentConfig& lc = params.latent;
	const bool fhvae = params.mode() == ModelMode::FHVAE;
	Gradients grad(params, fhvae ? &table : nullptr);
	BatchEvaluation ev;
	if (fhvae) {
		Noise noise = Noise::draw(state.rng, lc.dim_z1, lc.dim_z2, batch.size());
		ev = evaluate_fhvae_batch(params, table, batch.data, batch.seq_index, batch.seg_count, noise, cfg.alpha, &grad);
	} else {
		Noise noise = Noise::draw(state.rng, 0, lc.dim_z_vae, batch.size());
		ev = evaluate_vae_batch(params, batch.data, noise.z2, &grad);
	}
	StepResult r;
	r.bound = ev.mean;
	r.loss = -ev.mean.total + cfg.l2_weight * l2_norm_squared(params);
	if (!std::isfinite(r.loss)) throw NumericError("loss", "train_step");

	++state.step;
	const double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(state.step));
	const double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(state.step));
	auto adam = [&](double& theta, double g, double& m, double& v) {
		m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
		v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
		theta -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
	};

	std::vector<nn::ParamSpan> gspans;
	grad.params.visit([&](nn::ParamSpan s) { gspans.push_back(s); });
	std::size_t k = 0;
	params.visit([&](nn::ParamSpan s) {
		const nn::ParamSpan g = gspans[k];
		auto& m = state.m[k];
		auto& v = state.v[k];
		for (std::size_t j = 0; j < s.size(); ++j) adam(s[j], g[j] + 2.0 * cfg.l2_weight * s[j], m[j], v[j]);
		++k;
	});

	if (fhvae) {
		std::vector<Eigen::Index> rows(batch.seq_index);
		std::sort(rows.begin(), rows.end());
		rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
		for (Eigen::Index i : rows)
			for (Eigen::Index d = 0; d < table.dim(); ++d)
				adam(table.rows()(i, d), grad.table(i, d), state.table_m(i, d), state.table_v(i, d));
	}
	return r;
}

/// Stops after `patience` consecutive epochs without a strictly better dev bound.
class EarlyStopping {
public:
	explicit EarlyStopping(int patience) : patience_(patience) {}

	/// Returns true when training should stop after this epoch.
	bool update(double dev_bound) {
		if (dev_bound > best_) {
			best_ = dev_bound;
			since_ = 0;
			improved_ = true;
		} else {
			++since_;
			improved_ = false;
		}
		return since_ >= patience_;
	}
	bool improved() const { return improved_; }
	double best() const { return best_; }
	int since_improvement() const { return since_; }

private:
	int patience_;
	double best_ = -std::numeric_limits<double>::infinity();
	int since_ = 0;
	bool improved_ = false;
};

/// Mean segment bound (no discriminative term) over the non-overlapping
/// windows of `ds`, with mu2 estimated per utterance and noise from `seed`.
inline LossBreakdown evaluate_dataset_bound(const ModelParams& params, const Dataset& ds, std::uint64_t seed) {
	const LatentConfig& lc = params.latent;
	std::mt19937_64 rng(seed);
	LossBreakdown sum;
	double n = 0;
	const SVectorTable no_table;
	for (const auto& u : ds.utterances) {
		if (u.num_frames() < lc.input_width)
			throw DataError("utterance '" + u.id + "' is shorter than the window width");
		const Matrix windows = frame_windows(u.frames, lc.input_width, lc.input_width);
		const Eigen::Index B = windows.cols();
		BatchEvaluation ev;
		if (params.mode() == ModelMode::FHVAE) {
			Noise noise = Noise::draw(rng, lc.dim_z1, lc.dim_z2, B);
			const Matrix zbar = params.enc_z2.forward(windows, nullptr).mean;
			const Matrix mu2 = estimate_svector_from_means(zbar, lc).replicate(1, B);
			const std::vector<double> counts(static_cast<std::size_t>(B), static_cast<double>(B));
			ev = evaluate_fhvae_batch(params, no_table, windows, {}, counts, noise, 0.0, nullptr, &mu2);
		} else {
			Noise noise = Noise::draw(rng, 0, lc.dim_z_vae, B);
			ev = evaluate_vae_batch(params, windows, noise.z2);
		}
		for (const auto& s : ev.per_segment) {
			sum.recon += s.recon;
			sum.kl_z1 += s.kl_z1;
			sum.kl_z2 += s.kl_z2;
			sum.logp_mu2_scaled += s.logp_mu2_scaled;
			n += 1;
		}
	}
	sum.recon /= n;
	sum.kl_z1 /= n;
	sum.kl_z2 /= n;
	sum.logp_mu2_scaled /= n;
	sum.recompute_total();
	return sum;
}

struct EpochRecord {
	int epoch = 0;
	LossBreakdown train; // mean over the epoch's segments
	LossBreakdown dev;   // discriminative term excluded
	double train_loss = 0.0;
	bool improved = false;
};

struct TrainReport {
	std::vector<EpochRecord> epochs;
	int stop_epoch = 0;
	int best_epoch = 0;
	double best_dev_bound = -std::numeric_limits<double>::infinity();
	std::string best_checkpoint;
};

inline nlohmann::json to_json(const LossBreakdown& b) {
	return {{"recon", b.recon}, {"kl_z1", b.kl_z1}, {"kl_z2", b.kl_z2}, {"logp_mu2_scaled", b.logp_mu2_scaled},
			{"disc", b.disc},   {"total", b.total}, {"alpha", b.alpha}};
}

/// One JSON object per line per epoch, then a summary line.
inline void write_report(const std::filesystem::path& path, const TrainReport& r) {
	std::string out;
	for (const auto& e : r.epochs) {
		nlohmann::json j = {{"epoch", e.epoch},       {"train_bound", e.train.total}, {"dev_bound", e.dev.total},
							{"train_loss", e.train_loss}, {"improved", e.improved},   {"train", to_json(e.train)},
							{"dev", to_json(e.dev)}};
		out += j.dump() + '\n';
	}
	nlohmann::json summary = {{"summary", {{"stop_epoch", r.stop_epoch},
										   {"best_epoch", r.best_epoch},
										   {"best_dev_bound", r.best_dev_bound},
										   {"best_checkpoint", r.best_checkpoint}}}};
	out += summary.dump() + '\n';
	detail::write_file(path, out);
}

struct FitOptions {
	/// When non-empty the best model is also written here.
	std::filesystem::path checkpoint_path;
	/// Called after every epoch, e.g. for progress logging.
	std::function<void(const EpochRecord&)> on_epoch;
};

/// Builds a zero table with one row per sequence of `train`.
inline SVectorTable make_table(const Dataset& train, const LatentConfig& lc) {
	return SVectorTable(train.seq_ids, lc.dim_z2);
}

/// Trains until the dev bound has not improved for `patience_epochs` or
/// `max_epochs` is reached. On return `params`/`table` hold the best model.
inline TrainReport fit(const Dataset& train, const Dataset& dev, ModelParams& params, SVectorTable& table,
					   const TrainConfig& cfg, const FitOptions& opts = {}) {
	cfg.validate();
	if (train.empty()) throw DataError("fit: empty training set");
	if (dev.empty()) throw DataError("fit: empty dev set");
	if (params.mode() == ModelMode::FHVAE && table.size() != train.num_sequences())
		throw InputContractError("fit: table rows do not match training sequences");
	const int W = params.latent.input_width;
	TrainState state(params, table, cfg.seed);
	EarlyStopping stopper(cfg.patience_epochs);
	TrainReport report;
	ModelParams best_params = params;
	SVectorTable best_table = table;

	for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
		state.epoch = epoch;
		const auto batches = sample_segment_batches(train, state.rng, W, cfg.batch_size);
		EpochRecord rec;
		rec.epoch = epoch;
		rec.train.alpha = cfg.alpha;
		double seen = 0;
		for (const auto& b : batches) {
			const StepResult r = train_step(b, params, table, state, cfg);
			const double w = double(b.size());
			rec.train.recon += w * r.bound.recon;
			rec.train.kl_z1 += w * r.bound.kl_z1;
			rec.train.kl_z2 += w * r.bound.kl_z2;
			rec.train.logp_mu2_scaled += w * r.bound.logp_mu2_scaled;
			rec.train.disc += w * r.bound.disc;
			rec.train_loss += w * r.loss;
			seen += w;
		}
		rec.train.recon /= seen;
		rec.train.kl_z1 /= seen;
		rec.train.kl_z2 /= seen;
		rec.train.logp_mu2_scaled /= seen;
		rec.train.disc /= seen;
		rec.train.recompute_total();
		rec.train_loss /= seen;

		rec.dev = evaluate_dataset_bound(params, dev, cfg.eval_seed);
		const bool stop = stopper.update(rec.dev.total);
		rec.improved = stopper.improved();
		state.best_dev = stopper.best();
		state.epochs_since_improvement = stopper.since_improvement();
		if (rec.improved) {
			best_params = params;
			best_table = table;
			report.best_epoch = epoch;
			report.best_dev_bound = rec.dev.total;
			if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, params, table);
		}
		report.epochs.push_back(rec);
		if (opts.on_epoch) opts.on_epoch(rec);
		report.stop_epoch = epoch;
		if (stop) break;
	}
	params = std::move(best_params);
	table = std::move(best_table);
	report.best_checkpoint = opts.checkpoint_path.string();
	return report;
}

} // namespace fhvae
