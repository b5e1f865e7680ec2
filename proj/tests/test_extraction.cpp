#include <random>

#include <gtest/gtest.h>

#include "fhvae/extraction.hpp"
#include "map_oracle.hpp"
#include "test_util.hpp"

namespace fhvae {
namespace {

TEST(EstimateSvector, ZeroMeansGiveZero) {
	LatentConfig lc;
	EXPECT_TRUE(estimate_svector_from_means(Matrix::Zero(32, 5), lc).isZero(0.0));
}

TEST(EstimateSvector, SingleWindowMatchesOracle) {
	LatentConfig lc;
	const Matrix m = test::random_matrix(4, 1, 3);
	const Vector oracle = test::map_svector_oracle(m, lc.var_mu2, lc.var_z2);
	EXPECT_LT((estimate_svector_from_means(m, lc) - oracle).cwiseAbs().maxCoeff(), 1e-6);
	EXPECT_LT((oracle - m.col(0) / 1.25).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EstimateSvector, ManyWindowsApproachTheMean) {
	LatentConfig lc;
	const Vector c = Vector::LinSpaced(3, -2, 1.5);
	const Matrix zbar = c.replicate(1, 400);
	const Vector est = estimate_svector_from_means(zbar, lc);
	const Vector oracle = test::map_svector_oracle(zbar, lc.var_mu2, lc.var_z2);
	EXPECT_LT((est - oracle).cwiseAbs().maxCoeff(), 1e-6);
	for (int k = 0; k < 3; ++k) EXPECT_NEAR(est[k], c[k], 0.01 * std::abs(c[k]));
}

TEST(EstimateSvector, FromUtteranceMatchesOracleOnWindowMeans) {
	LatentConfig lc = test::tiny_latent();
	lc.var_mu2 = 0.7;
	lc.var_z2 = 0.3;
	for (CellType cell : {CellType::Feedforward, CellType::Recurrent}) {
		ModelParams p(lc, test::tiny_arch(cell));
		test::randomize(p, 12);
		const Matrix frames = test::random_matrix(27, lc.input_dim, 4); // 6 full windows, 3 spare frames
		Matrix zbar(lc.dim_z2, 6);
		for (int n = 0; n < 6; ++n) zbar.col(n) = encode_z2(frames.middleRows(n * lc.input_width, lc.input_width), p).mean;
		const Vector oracle = test::map_svector_oracle(zbar, lc.var_mu2, lc.var_z2);
		EXPECT_LT((estimate_svector(frames, p) - oracle).cwiseAbs().maxCoeff(), 1e-6);
	}
}

TEST(EstimateSvector, Errors) {
	const LatentConfig lc = test::tiny_latent();
	const ModelParams p = ModelParams::initialized(lc, test::tiny_arch(CellType::Feedforward), 1);
	EXPECT_THROW(estimate_svector(Matrix::Zero(lc.input_width - 1, lc.input_dim), p), DataError);
	const ModelParams v = ModelParams::initialized(lc, test::tiny_arch(CellType::Feedforward, ModelMode::VAE), 1);
	EXPECT_THROW(estimate_svector(Matrix::Zero(lc.input_width, lc.input_dim), v), InputContractError);
}

TEST(ExtractFeatures, FullScaleDimensions) {
	LatentConfig lc; // W=20, D=80
	ArchConfig ac;
	ac.cell = CellType::Feedforward;
	ac.units = 8;
	const ModelParams p = ModelParams::initialized(lc, ac, 1);
	ac.mode = ModelMode::VAE;
	const ModelParams v = ModelParams::initialized(lc, ac, 1);
	const Matrix frames = test::random_matrix(100, 80, 2);
	EXPECT_EQ(extract_features(frames, p, ExtractionMode::Z1).rows(), 100);
	EXPECT_EQ(extract_features(frames, p, ExtractionMode::Z1).cols(), 64);
	EXPECT_EQ(extract_features(frames, v, ExtractionMode::Z_VAE).cols(), 128);
	EXPECT_EQ(extract_features(frames, p, ExtractionMode::Z1_MU2).cols(), 96);
	EXPECT_EQ(extract_features(frames, p, ExtractionMode::Z1Z2).cols(), 128);
	for (auto m : {ExtractionMode::Z1, ExtractionMode::Z1_MU2, ExtractionMode::Z1Z2})
		EXPECT_EQ(feature_dim(m, lc), extract_features(frames, p, m).cols());
}

class ExtractCells : public ::testing::TestWithParam<CellType> {};

TEST_P(ExtractCells, LengthPaddingAndPositivity) {
	const LatentConfig lc = test::tiny_latent(); // W = 4
	ModelParams p(lc, test::tiny_arch(GetParam()));
	test::randomize(p, 5);
	for (int T : {4, 5, 9, 31}) {
		const Matrix frames = test::random_matrix(T, lc.input_dim, 100 + T);
		const Matrix f = extract_features(frames, p, ExtractionMode::Z1);
		ASSERT_EQ(f.rows(), T);
		EXPECT_GT(f.rightCols(lc.dim_z1).minCoeff(), 0.0);
		// direct per-window oracle: window k starts at frame k
		const int n = T - lc.input_width + 1;
		auto derived = [&](int k) {
			const Matrix win = frames.middleRows(k, lc.input_width);
			const Vector z2 = encode_z2(win, p).mean;
			const DiagGaussian q = encode_z1(win, z2, p);
			Vector row(2 * lc.dim_z1);
			row << q.mean, q.logvar.array().exp().matrix();
			return row;
		};
		const int front = lc.input_width / 2; // ceil(3/2) = 2
		const int back = (lc.input_width - 1) / 2;
		EXPECT_EQ(front + n + back, T);
		for (int t = 0; t < T; ++t) {
			const int k = std::clamp(t - front, 0, n - 1);
			EXPECT_LT((f.row(t).transpose() - derived(k)).cwiseAbs().maxCoeff(), 1e-12) << "T=" << T << " t=" << t;
		}
		if (T == lc.input_width)
			for (int t = 1; t < T; ++t) EXPECT_EQ(f.row(t), f.row(0));
	}
}

TEST_P(ExtractCells, DeterministicAndModeContracts) {
	const LatentConfig lc = test::tiny_latent();
	ModelParams p(lc, test::tiny_arch(GetParam()));
	test::randomize(p, 6);
	const Matrix frames = test::random_matrix(15, lc.input_dim, 1);
	EXPECT_EQ(extract_features(frames, p, ExtractionMode::Z1Z2), extract_features(frames, p, ExtractionMode::Z1Z2));
	EXPECT_THROW(extract_features(frames, p, ExtractionMode::Z_VAE), InputContractError);
	ModelParams v(lc, test::tiny_arch(GetParam(), ModelMode::VAE));
	EXPECT_THROW(extract_features(frames, v, ExtractionMode::Z1), InputContractError);
	EXPECT_THROW(extract_features(frames.topRows(lc.input_width - 1), p, ExtractionMode::Z1), DataError);
	EXPECT_THROW(extract_features(Matrix::Zero(15, lc.input_dim + 1), p, ExtractionMode::Z1), InputContractError);

	const Matrix est = extract_features(frames, p, ExtractionMode::Z1_MU2);
	const Vector mu2 = estimate_svector(frames, p);
	for (Eigen::Index t = 0; t < est.rows(); ++t) EXPECT_EQ(est.row(t).tail(lc.dim_z2).transpose(), mu2);
	const Vector row = test::random_vector(lc.dim_z2, 9);
	const Matrix tab = extract_features(frames, p, ExtractionMode::Z1_MU2, &row);
	EXPECT_EQ(tab.row(3).tail(lc.dim_z2).transpose(), row);
	EXPECT_EQ(tab.leftCols(2 * lc.dim_z1), est.leftCols(2 * lc.dim_z1));
}

TEST_P(ExtractCells, ConstantInputIsTranslationInvariant) {
	const LatentConfig lc = test::tiny_latent();
	ModelParams p(lc, test::tiny_arch(GetParam()));
	test::randomize(p, 7);
	const Matrix frames = test::random_matrix(1, lc.input_dim, 3).replicate(40, 1);
	const Matrix f = extract_features(frames, p, ExtractionMode::Z1Z2);
	for (int t = lc.input_width; t + lc.input_width < 40; ++t) EXPECT_EQ(f.row(t), f.row(t + lc.input_width));
}

INSTANTIATE_TEST_SUITE_P(Cells, ExtractCells, ::testing::Values(CellType::Recurrent, CellType::Feedforward),
						 [](const auto& info) { return to_string(info.param); });

TEST(FrameWindows, StrideAndLayout) {
	Matrix frames(5, 2);
	frames << 0, 1, 2, 3, 4, 5, 6, 7, 8, 9;
	const Matrix w = frame_windows(frames, 2, 2);
	ASSERT_EQ(w.cols(), 2);
	EXPECT_EQ(w.col(0), (Vector(4) << 0, 1, 2, 3).finished());
	EXPECT_EQ(w.col(1), (Vector(4) << 4, 5, 6, 7).finished());
	EXPECT_EQ(frame_windows(frames, 2, 1).cols(), 4);
}

TEST(ExtractionModeTest, Parse) {
	EXPECT_EQ(parse_extraction_mode("z1mu2"), ExtractionMode::Z1_MU2);
	EXPECT_EQ(to_string(ExtractionMode::Z_VAE), "z");
	EXPECT_THROW(parse_extraction_mode("z3"), ConfigError);
}

} // namespace
} // namespace fhvae
