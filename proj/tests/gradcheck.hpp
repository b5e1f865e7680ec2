#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fhvae/fhvae.hpp"
#include "test_util.hpp"

namespace fhvae::test {

struct GradCheckResult {
	double max_rel_error = 0.0;
	std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on
/// near-zero entries from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
	return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Independent central-difference check of evaluate_fhvae_batch (or the VAE
/// ELBO when the model is in VAE mode) over every parameter and table entry.
/// The differentiated quantity is the mean negative total over the batch.
inline GradCheckResult check_gradients(ModelParams p, SVectorTable table, const Matrix& x,
									   const std::vector<Eigen::Index>& seq, const std::vector<double>& seg_count,
									   const Noise& noise, double alpha, double step = 1e-5) {
	const bool vae = p.mode() == ModelMode::VAE;
	auto loss = [&]() {
		const BatchEvaluation ev = vae ? evaluate_vae_batch(p, x, noise.z2)
									   : evaluate_fhvae_batch(p, table, x, seq, seg_count, noise, alpha);
		return -ev.mean.total;
	};
	Gradients g(p, vae ? nullptr : &table);
	g.set_zero();
	if (vae)
		evaluate_vae_batch(p, x, noise.z2, &g);
	else
		evaluate_fhvae_batch(p, table, x, seq, seg_count, noise, alpha, &g);

	std::vector<double*> theta;
	std::vector<double> analytic;
	p.visit([&](nn::ParamSpan s) {
		for (double& v : s) theta.push_back(&v);
	});
	g.params.visit([&](nn::ParamSpan s) {
		for (double v : s) analytic.push_back(v);
	});
	for (Eigen::Index k = 0; k < table.rows().size(); ++k) {
		theta.push_back(table.rows().data() + k);
		analytic.push_back(g.table.data()[k]);
	}

	GradCheckResult r;
	for (std::size_t k = 0; k < theta.size(); ++k) {
		const double keep = *theta[k];
		*theta[k] = keep + step;
		const double up = loss();
		*theta[k] = keep - step;
		const double down = loss();
		*theta[k] = keep;
		r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k], (up - down) / (2 * step)));
		++r.checked;
	}
	return r;
}

/// Random FHVAE batch fixture: B windows over a table of `rows` sequences.
struct GradFixture {
	ModelParams params;
	SVectorTable table;
	Matrix x;
	std::vector<Eigen::Index> seq;
	std::vector<double> seg_count;
	Noise noise;
};

inline GradFixture make_grad_fixture(const LatentConfig& lc, const ArchConfig& ac, int batch, int rows,
									 std::uint64_t seed) {
	GradFixture f;
	f.params = ModelParams(lc, ac);
	randomize(f.params, seed);
	std::vector<std::string> ids;
	for (int k = 0; k < rows; ++k) ids.push_back("seq" + std::to_string(k));
	f.table = SVectorTable(ids, lc.dim_z2);
	f.table.rows() = random_matrix(rows, lc.dim_z2, seed + 1, 0.5);
	f.x = random_matrix(Eigen::Index(lc.input_width) * lc.input_dim, batch, seed + 2);
	for (int b = 0; b < batch; ++b) {
		f.seq.push_back(b % rows);
		f.seg_count.push_back(1.0 + (b % rows));
	}
	std::mt19937_64 rng(seed + 3);
	const int d2 = ac.mode == ModelMode::VAE ? lc.dim_z_vae : lc.dim_z2;
	f.noise = Noise::draw(rng, lc.dim_z1, d2, batch);
	return f;
}

} // namespace fhvae::test
