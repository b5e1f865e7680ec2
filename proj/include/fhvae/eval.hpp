#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhvae/data.hpp"
#include "fhvae/extraction.hpp"
#include "fhvae/model.hpp"

namespace fhvae {

/// Labeled feature vectors, one per row.
struct LabeledFeatures {
	Matrix x;
	std::vector<int> y;

	Eigen::Index size() const { return x.rows(); }
};

struct ProbeOptions {
	double l2 = 1e-3;
	double tolerance = 1e-6;
	int max_iterations = 2000;
	std::uint64_t seed = 0;
};

/// Multinomial logistic-regression probe on standardized features.
struct LinearProbe {
	Eigen::RowVectorXd mean;
	Eigen::RowVectorXd scale;
	Matrix weights; // (F + 1) x K, last row is the bias

	Matrix design(const Matrix& x) const {
		const Eigen::Index F = mean.size();
		if (x.cols() != F) throw InputContractError("probe: feature dimension mismatch");
		Matrix out(x.rows(), F + 1);
		out.leftCols(F) = ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
		out.col(F).setOnes();
		return out;
	}

	std::vector<int> predict(const Matrix& x) const {
		const Matrix scores = design(x) * weights;
		std::vector<int> out(std::size_t(x.rows()));
		for (Eigen::Index i = 0; i < x.rows(); ++i) {
			Eigen::Index arg;
			scores.row(i).maxCoeff(&arg);
			out[std::size_t(i)] = int(arg);
		}
		return out;
	}

	double accuracy(const LabeledFeatures& test) const {
		if (test.size() < 1 || Eigen::Index(test.y.size()) != test.size())
			throw InputContractError("probe: test set empty or labels mismatch");
		const auto pred = predict(test.x);
		std::size_t correct = 0;
		for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.y[i];
		return double(correct) / double(pred.size());
	}
};

/// Fits the probe by full-batch gradient descent with step 1/L, where
/// L = 0.5 * lambda_max(X'X / n) + l2 bounds the curvature of the mean
/// softmax cross-entropy. Standardization statistics come from `train`.
inline LinearProbe fit_probe(const LabeledFeatures& train, const ProbeOptions& opt = {}) {
	if (train.size() < 1 || Eigen::Index(train.y.size()) != train.size())
		throw InputContractError("probe_accuracy: train features/labels mismatch");
	int classes = 0;
	bool two = false;
	for (int c : train.y) {
		if (c < 0) throw InputContractError("probe_accuracy: negative label");
		classes = std::max(classes, c + 1);
		two = two || c != train.y.front();
	}
	if (!two) throw InputContractError("probe_accuracy: train split has a single class");

	const Eigen::Index n = train.size();
	const Eigen::Index F = train.x.cols();
	LinearProbe probe;
	probe.mean = train.x.colwise().mean();
	probe.scale = ((train.x.rowwise() - probe.mean).array().square().colwise().sum() / double(n)).sqrt().matrix();
	for (auto& s : probe.scale)
		if (!(s > 1e-12)) s = 1.0;
	const Matrix X = probe.design(train.x);
	Matrix Y = Matrix::Zero(n, classes);
	for (Eigen::Index i = 0; i < n; ++i) Y(i, train.y[std::size_t(i)]) = 1.0;

	const Matrix gram = X.transpose() * X / double(n);
	const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
	const double step = 1.0 / (0.5 * lmax + opt.l2);

	std::mt19937_64 rng(opt.seed);
	std::uniform_real_distribution<double> init(-0.01, 0.01);
	probe.weights.resize(F + 1, classes);
	for (Eigen::Index k = 0; k < probe.weights.size(); ++k) probe.weights.data()[k] = init(rng);

	Matrix& Wt = probe.weights;
	for (int it = 0; it < opt.max_iterations; ++it) {
		Matrix p = X * Wt;
		const Eigen::VectorXd mx = p.rowwise().maxCoeff();
		p = (p.colwise() - mx).array().exp().matrix();
		p.array().colwise() /= p.rowwise().sum().array();
		Matrix g = X.transpose() * (p - Y) / double(n);
		g.topRows(F) += opt.l2 * Wt.topRows(F);
		Wt -= step * g;
		if (g.norm() < opt.tolerance) break;
	}
	return probe;
}

/// Test accuracy in [0, 1] of a probe fit on `train`.
inline double probe_accuracy(const LabeledFeatures& train, const LabeledFeatures& test, const ProbeOptions& opt = {}) {
	if (test.size() < 1 || Eigen::Index(test.y.size()) != test.size())
		throw InputContractError("probe_accuracy: test set empty or labels mismatch");
	if (train.x.cols() != test.x.cols()) throw InputContractError("probe_accuracy: feature dimension mismatch");
	return fit_probe(train, opt).accuracy(test);
}

/// Mean squared distance of table rows from their centroid.
inline double svector_spread(const SVectorTable& table) {
	if (table.size() == 0) throw InputContractError("svector_spread: empty table");
	const Eigen::RowVectorXd centroid = table.rows().colwise().mean();
	return (table.rows().rowwise() - centroid).rowwise().squaredNorm().mean();
}

// ---------------------------------------------------------------------------

/// Feature row kinds compared by the invariance report. Raw uses the input frames.
enum class ReportFeature { Raw, Z_VAE, Z1, Z1_MU2 };

inline std::string to_string(ReportFeature f) {
	switch (f) {
	case ReportFeature::Raw: return "raw";
	case ReportFeature::Z_VAE: return "z";
	case ReportFeature::Z1: return "z1";
	case ReportFeature::Z1_MU2: return "z1mu2";
	}
	return "raw";
}

inline ReportFeature parse_report_feature(const std::string& s) {
	if (s == "raw") return ReportFeature::Raw;
	if (s == "z") return ReportFeature::Z_VAE;
	if (s == "z1") return ReportFeature::Z1;
	if (s == "z1mu2") return ReportFeature::Z1_MU2;
	throw ConfigError("unknown report feature '" + s + "' (expected raw|z|z1|z1mu2)");
}

/// Models available to the report; either may be null if no row needs it.
struct ReportModels {
	const ModelParams* fhvae = nullptr;
	const SVectorTable* table = nullptr; // rows used for Z1_MU2 on training utterances
	const ModelParams* vae = nullptr;
};

/// Frame-level features and per-frame segment classes for a whole dataset.
inline LabeledFeatures frame_features(const Dataset& ds, ReportFeature feature, const ReportModels& models) {
	LabeledFeatures out;
	std::vector<Matrix> parts;
	Eigen::Index rows = 0;
	for (const auto& u : ds.utterances) {
		if (Eigen::Index(u.segment_classes.size()) != u.num_frames())
			throw DataError("utterance '" + u.id + "' has no per-frame segment labels");
		Matrix f;
		switch (feature) {
		case ReportFeature::Raw: f = u.frames; break;
		case ReportFeature::Z_VAE:
			if (!models.vae) throw InputContractError("invariance report: row 'z' needs a VAE checkpoint");
			f = extract_features(u.frames, *models.vae, ExtractionMode::Z_VAE);
			break;
		case ReportFeature::Z1:
			if (!models.fhvae) throw InputContractError("invariance report: row 'z1' needs an FHVAE checkpoint");
			f = extract_features(u.frames, *models.fhvae, ExtractionMode::Z1);
			break;
		case ReportFeature::Z1_MU2: {
			if (!models.fhvae) throw InputContractError("invariance report: row 'z1mu2' needs an FHVAE checkpoint");
			Vector row;
			const Vector* mu2 = nullptr;
			if (models.table && models.table->size() > 0) {
				if (const auto i = models.table->find(u.id); i >= 0) {
					row = models.table->lookup(i);
					mu2 = &row;
				}
			}
			f = extract_features(u.frames, *models.fhvae, ExtractionMode::Z1_MU2, mu2);
			break;
		}
		}
		rows += f.rows();
		parts.push_back(std::move(f));
		out.y.insert(out.y.end(), u.segment_classes.begin(), u.segment_classes.end());
	}
	if (parts.empty()) throw DataError("frame_features: empty dataset");
	out.x.resize(rows, parts.front().cols());
	Eigen::Index r = 0;
	for (const auto& p : parts) {
		out.x.middleRows(r, p.rows()) = p;
		r += p.rows();
	}
	return out;
}

struct InvarianceRow {
	std::string feature;
	double clean_error = 0.0;   // percent, matched condition
	double shifted_error = 0.0; // percent, mismatched condition
	double average = 0.0;
};

struct InvarianceReport {
	std::vector<InvarianceRow> rows;
	std::map<std::string, std::string> metadata;

	const InvarianceRow* find(const std::string& feature) const {
		for (const auto& r : rows)
			if (r.feature == feature) return &r;
		return nullptr;
	}

	std::string to_text() const {
		std::ostringstream s;
		s << std::left << std::setw(10) << "feature" << std::right << std::setw(12) << "clean(A)" << std::setw(12)
		  << "shifted" << std::setw(12) << "avg" << '\n';
		s << std::fixed << std::setprecision(2);
		for (const auto& r : rows)
			s << std::left << std::setw(10) << r.feature << std::right << std::setw(12) << r.clean_error << std::setw(12)
			  << r.shifted_error << std::setw(12) << r.average << '\n';
		return s.str();
	}

	nlohmann::json to_json() const {
		nlohmann::json j;
		j["metadata"] = metadata;
		j["rows"] = nlohmann::json::array();
		for (const auto& r : rows)
			j["rows"].push_back(
				{{"feature", r.feature}, {"clean_error", r.clean_error}, {"shifted_error", r.shifted_error}, {"average", r.average}});
		return j;
	}
};

/// Trains a segment-class probe on `clean_train` frames for each feature and
/// reports its error (percent) on the clean and shifted test sets.
inline InvarianceReport invariance_report(const ReportModels& models, const Dataset& clean_train,
										  const Dataset& clean_test, const Dataset& shifted_test,
										  const std::vector<ReportFeature>& features, const ProbeOptions& probe = {}) {
	InvarianceReport rep;
	for (ReportFeature f : features) {
		const LabeledFeatures tr = frame_features(clean_train, f, models);
		const LabeledFeatures a = frame_features(clean_test, f, models);
		const LabeledFeatures b = frame_features(shifted_test, f, models);
		InvarianceRow row;
		row.feature = to_string(f);
		const LinearProbe fitted = fit_probe(tr, probe);
		row.clean_error = 100.0 * (1.0 - fitted.accuracy(a));
		row.shifted_error = 100.0 * (1.0 - fitted.accuracy(b));
		row.average = 0.5 * (row.clean_error + row.shifted_error);
		rep.rows.push_back(row);
	}
	rep.metadata["probe_seed"] = std::to_string(probe.seed);
	return rep;
}

/// Posterior means of z1 and z2 for the segment-aligned windows of every
/// utterance, with the class of each segment and the utterance's labels.
struct SegmentLatents {
	Matrix z1; // rows
	Matrix z2;
	std::vector<int> segment_class;
	std::vector<std::size_t> utt;
};

inline SegmentLatents collect_segment_latents(const Dataset& ds, const ModelParams& p) {
	if (p.mode() != ModelMode::FHVAE) throw InputContractError("collect_segment_latents: needs an FHVAE model");
	const int W = p.latent.input_width;
	std::vector<Matrix> z1s, z2s;
	SegmentLatents out;
	Eigen::Index rows = 0;
	for (std::size_t u = 0; u < ds.size(); ++u) {
		const auto& utt = ds.utterances[u];
		if (utt.num_frames() < W) throw DataError("utterance '" + utt.id + "' is shorter than the window width");
		const Matrix windows = frame_windows(utt.frames, W, W);
		auto c2 = p.enc_z2.forward(windows, nullptr);
		auto c1 = p.enc_z1.forward(windows, &c2.mean);
		z1s.push_back(c1.mean.transpose());
		z2s.push_back(c2.mean.transpose());
		rows += windows.cols();
		for (Eigen::Index k = 0; k < windows.cols(); ++k) {
			out.utt.push_back(u);
			out.segment_class.push_back(utt.segment_classes.empty() ? -1
																	: utt.segment_classes[std::size_t(k * W + W / 2)]);
		}
	}
	out.z1.resize(rows, p.latent.dim_z1);
	out.z2.resize(rows, p.latent.dim_z2);
	Eigen::Index r = 0;
	for (std::size_t k = 0; k < z1s.size(); ++k) {
		out.z1.middleRows(r, z1s[k].rows()) = z1s[k];
		out.z2.middleRows(r, z2s[k].rows()) = z2s[k];
		r += z1s[k].rows();
	}
	return out;
}

} // namespace fhvae
