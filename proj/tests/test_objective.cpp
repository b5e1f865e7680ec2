#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fhvae/objective.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace fhvae {
namespace {

SVectorTable table_of(const Matrix& rows) {
	std::vector<std::string> ids;
	for (Eigen::Index k = 0; k < rows.rows(); ++k) ids.push_back("s" + std::to_string(k));
	SVectorTable t(ids, int(rows.cols()));
	t.rows() = rows;
	return t;
}

TEST(DiscriminativeLogprob, Examples) {
	LatentConfig lc;
	lc.var_z2 = 1.0;
	const SVectorTable tied = table_of(Matrix::Constant(2, 3, 0.7));
	EXPECT_NEAR(discriminative_logprob(test::random_vector(3, 1), 1, tied, lc), std::log(0.5), 1e-12);
	EXPECT_EQ(discriminative_logprob(test::random_vector(3, 2), 0, table_of(Matrix::Ones(1, 3)), lc), 0.0);
	Matrix rows(2, 1);
	rows << 0, 2;
	// two direct density evaluations
	const double p0 = std::exp(gaussian_log_prob(Vector::Zero(1), DiagGaussian::isotropic(Vector::Zero(1), 1.0)));
	const double p1 = std::exp(gaussian_log_prob(Vector::Zero(1), DiagGaussian::isotropic(Vector::Constant(1, 2.0), 1.0)));
	const double expected = std::log(p0 / (p0 + p1));
	EXPECT_NEAR(expected, -0.12693, 1e-5);
	EXPECT_NEAR(discriminative_logprob(Vector::Zero(1), 0, table_of(rows), lc), expected, 1e-12);
	EXPECT_THROW(discriminative_logprob(Vector::Zero(1), 0, SVectorTable(), lc), InputContractError);
	EXPECT_THROW(discriminative_logprob(Vector::Zero(1), 2, table_of(rows), lc), InputContractError);
}

TEST(DiscriminativeLogprob, NormalizesOverTableAndIsNonPositive) {
	LatentConfig lc;
	for (int trial = 0; trial < 50; ++trial) {
		const int M = 1 + trial % 9;
		const SVectorTable t = table_of(test::random_matrix(M, 4, trial, 3.0));
		const Vector z2 = test::random_vector(4, 100 + trial, 3.0);
		double sum = 0.0;
		for (int i = 0; i < M; ++i) {
			const double lp = discriminative_logprob(z2, i, t, lc);
			EXPECT_LE(lp, 0.0);
			sum += std::exp(lp);
		}
		EXPECT_NEAR(sum, 1.0, 1e-9);
	}
	// far-away z2 must not underflow to -inf/NaN
	const SVectorTable t = table_of(test::random_matrix(3, 4, 1));
	EXPECT_TRUE(std::isfinite(discriminative_logprob(Vector::Constant(4, 1e4), 0, t, lc)));
}

TEST(LossBreakdownTest, ArithmeticIdentity) {
	LossBreakdown b;
	b.recon = -90.0;
	b.kl_z1 = 6.0;
	b.kl_z2 = 3.5;
	b.logp_mu2_scaled = -0.5;
	b.disc = -0.69315;
	b.alpha = 10.0;
	b.recompute_total();
	EXPECT_NEAR(b.segment_bound(), -100.0, 1e-12);
	EXPECT_NEAR(b.total, -106.9315, 1e-9);
}

class ObjectiveCells : public ::testing::TestWithParam<CellType> {};

TEST_P(ObjectiveCells, BreakdownIdentityAndSigns) {
	const LatentConfig lc = test::tiny_latent();
	auto f = test::make_grad_fixture(lc, test::tiny_arch(GetParam()), 5, 3, 21);
	const BatchEvaluation ev = evaluate_fhvae_batch(f.params, f.table, f.x, f.seq, f.seg_count, f.noise, 10.0);
	for (const LossBreakdown& b : ev.per_segment) {
		EXPECT_EQ(b.total, b.recon - b.kl_z1 - b.kl_z2 + b.logp_mu2_scaled + b.alpha * b.disc);
		EXPECT_GE(b.kl_z1, 0.0);
		EXPECT_GE(b.kl_z2, 0.0);
		EXPECT_LE(b.disc, 0.0);
	}
	const LossBreakdown& m = ev.mean;
	EXPECT_EQ(m.total, m.recon - m.kl_z1 - m.kl_z2 + m.logp_mu2_scaled + m.alpha * m.disc);
}

TEST_P(ObjectiveCells, AlphaZeroMatchesSegmentBound) {
	const LatentConfig lc = test::tiny_latent();
	auto f = test::make_grad_fixture(lc, test::tiny_arch(GetParam()), 1, 3, 5);
	const Matrix window = Eigen::Map<const Matrix>(f.x.data(), lc.input_dim, lc.input_width).transpose();
	const LossBreakdown L = segment_lower_bound(window, 1, f.params, f.table, 2.0, f.noise.z1.col(0), f.noise.z2.col(0));
	const LossBreakdown D0 = dis_lower_bound(window, 1, f.params, f.table, 2.0, 0.0, f.noise.z1.col(0), f.noise.z2.col(0));
	const LossBreakdown D10 = dis_lower_bound(window, 1, f.params, f.table, 2.0, 10.0, f.noise.z1.col(0), f.noise.z2.col(0));
	EXPECT_EQ(L.disc, 0.0);
	EXPECT_EQ(D0.total, L.total);
	EXPECT_DOUBLE_EQ(D10.total, L.total + 10.0 * D10.disc);
	EXPECT_THROW(dis_lower_bound(window, 1, f.params, f.table, 2.0, -1.0, f.noise.z1.col(0), f.noise.z2.col(0)),
				 InputContractError);
	EXPECT_THROW(segment_lower_bound(window, 3, f.params, f.table, 2.0, f.noise.z1.col(0), f.noise.z2.col(0)),
				 InputContractError);
}

TEST_P(ObjectiveCells, AnalyticGradientsMatchFiniteDifferences) {
	const LatentConfig lc = test::tiny_latent();
	const auto f = test::make_grad_fixture(lc, test::tiny_arch(GetParam()), 4, 3, 31);
	const auto r = test::check_gradients(f.params, f.table, f.x, f.seq, f.seg_count, f.noise, 10.0);
	EXPECT_GT(r.checked, 100u);
	EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(ObjectiveCells, VaeGradientsMatchFiniteDifferences) {
	const LatentConfig lc = test::tiny_latent();
	const auto f = test::make_grad_fixture(lc, test::tiny_arch(GetParam(), ModelMode::VAE), 4, 1, 41);
	const auto r = test::check_gradients(f.params, SVectorTable(), f.x, {}, {}, f.noise, 0.0);
	EXPECT_LT(r.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Cells, ObjectiveCells, ::testing::Values(CellType::Recurrent, CellType::Feedforward),
						 [](const auto& info) { return to_string(info.param); });

TEST(SegmentBound, HandSetPosteriors) {
	LatentConfig lc;
	lc.input_width = 2;
	lc.input_dim = 3;
	ArchConfig ac;
	ac.cell = CellType::Feedforward;
	ac.units = 4;
	ModelParams p(lc, ac); // all zero
	// q(z1|.) = N(1, 1) in every one of 32 dims
	p.enc_z1.mean_head().bias.setOnes();
	// q(z2|.) = N(0, var_z2)
	p.enc_z2.logvar_head().bias.setConstant(std::log(lc.var_z2));
	const SVectorTable t({"a", "b"}, lc.dim_z2);
	const Matrix x = test::random_matrix(2, 3, 4);
	const LossBreakdown b =
		segment_lower_bound(x, 0, p, t, 3.0, test::random_vector(32, 1), test::random_vector(32, 2));
	EXPECT_NEAR(b.kl_z1, 16.0, 1e-12);
	EXPECT_NEAR(b.kl_z2, 0.0, 1e-12);
	const double logp0 = gaussian_log_prob(Vector::Zero(32), DiagGaussian::isotropic(Vector::Zero(32), lc.var_mu2));
	EXPECT_NEAR(b.logp_mu2_scaled, logp0 / 3.0, 1e-12);
}

TEST(VaeElbo, HandSetPosteriorAndDecomposition) {
	LatentConfig lc;
	lc.input_width = 2;
	lc.input_dim = 3;
	ArchConfig ac;
	ac.cell = CellType::Feedforward;
	ac.units = 4;
	ac.mode = ModelMode::VAE;
	ModelParams p(lc, ac); // zero params: q(z|x) = N(0, I), decoder ignores z
	const Matrix x = test::random_matrix(2, 3, 9);
	const LossBreakdown b = vae_elbo(x, p, test::random_vector(64, 3));
	EXPECT_EQ(b.kl_z1, 0.0);
	EXPECT_EQ(b.kl_z2, 0.0);
	EXPECT_EQ(b.disc, 0.0);
	Vector flat(6);
	for (int t = 0; t < 2; ++t) flat.segment(3 * t, 3) = x.row(t).transpose();
	EXPECT_NEAR(b.recon, gaussian_log_prob(flat, DiagGaussian(Vector::Zero(6), Vector::Zero(6))), 1e-12);
	EXPECT_EQ(b.total, b.recon - b.kl_z1);
	test::randomize(p, 2);
	const LossBreakdown r = vae_elbo(x, p, test::random_vector(64, 3));
	EXPECT_EQ(r.total, r.recon - r.kl_z1);
	ac.mode = ModelMode::FHVAE;
	EXPECT_THROW(vae_elbo(x, ModelParams(lc, ac), test::random_vector(64, 3)), InputContractError);
}

TEST(SegmentBound, ReconMonteCarloStandardErrorShrinks) {
	const LatentConfig lc = test::tiny_latent();
	auto f = test::make_grad_fixture(lc, test::tiny_arch(CellType::Feedforward), 1, 2, 7);
	const Matrix window = Eigen::Map<const Matrix>(f.x.data(), lc.input_dim, lc.input_width).transpose();
	std::mt19937_64 rng(3);
	std::normal_distribution<double> n01;
	auto stderr_of = [&](int n) {
		double s = 0, s2 = 0;
		for (int k = 0; k < n; ++k) {
			Vector e1(lc.dim_z1), e2(lc.dim_z2);
			for (auto& v : e1) v = n01(rng);
			for (auto& v : e2) v = n01(rng);
			const double r = segment_lower_bound(window, 0, f.params, f.table, 1.0, e1, e2).recon;
			s += r;
			s2 += r * r;
		}
		const double m = s / n;
		return std::sqrt((s2 / n - m * m) / n);
	};
	const double se_small = stderr_of(625);
	const double se_large = stderr_of(10000);
	// 16x the samples -> 4x smaller standard error, up to sampling noise
	EXPECT_NEAR(se_small / se_large, 4.0, 0.6);
}

TEST(Degeneracy, TiedTableIsPermutationInvariant) {
	const LatentConfig lc = test::tiny_latent();
	for (CellType cell : {CellType::Feedforward, CellType::Recurrent}) {
		auto f = test::make_grad_fixture(lc, test::tiny_arch(cell), 6, 4, 17);
		for (Eigen::Index r = 0; r < f.table.size(); ++r) f.table.set_row(r, Vector::Constant(lc.dim_z2, 0.3));
		const std::vector<double> counts(6, 2.0);
		std::vector<Eigen::Index> seq = {0, 1, 2, 3, 0, 1};
		const double base = evaluate_fhvae_batch(f.params, f.table, f.x, seq, counts, f.noise, 0.0).mean.total;
		std::mt19937_64 rng(1);
		for (int k = 0; k < 10; ++k) {
			std::shuffle(seq.begin(), seq.end(), rng);
			EXPECT_EQ(evaluate_fhvae_batch(f.params, f.table, f.x, seq, counts, f.noise, 0.0).mean.total, base);
		}
	}
}

TEST(SegmentBound, NonFiniteInputIsRejected) {
	const LatentConfig lc = test::tiny_latent();
	auto f = test::make_grad_fixture(lc, test::tiny_arch(CellType::Feedforward), 2, 2, 3);
	f.x(0, 0) = std::numeric_limits<double>::infinity();
	EXPECT_THROW(evaluate_fhvae_batch(f.params, f.table, f.x, f.seq, f.seg_count, f.noise, 1.0), InputContractError);
}

} // namespace
} // namespace fhvae
