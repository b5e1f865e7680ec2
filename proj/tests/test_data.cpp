#include <numeric>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fhvae/data.hpp"
#include "fhvae/eval.hpp"
#include "fhvae/trainer.hpp"
#include "test_util.hpp"

namespace fhvae {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
	const fs::path p = fs::temp_directory_path() / ("fhvae_data_" + name);
	fs::remove_all(p);
	fs::create_directories(p);
	return p;
}

FeatureArchive random_archive(std::mt19937_64& rng) {
	FeatureArchive a;
	const int n = std::uniform_int_distribution<int>(0, 6)(rng);
	std::normal_distribution<float> v(0.0f, 100.0f);
	for (int k = 0; k < n; ++k) {
		ArchiveRecord r;
		r.id = "utt-" + std::to_string(k) + std::string(std::size_t(k), 'x');
		r.rows = std::uniform_int_distribution<std::uint32_t>(0, 9)(rng);
		r.cols = std::uniform_int_distribution<std::uint32_t>(1, 5)(rng);
		for (std::uint32_t i = 0; i < r.rows * r.cols; ++i) r.data.push_back(v(rng));
		a.records.push_back(std::move(r));
	}
	return a;
}

TEST(Archive, RoundTripProperty) {
	std::mt19937_64 rng(4);
	const fs::path dir = scratch_dir("roundtrip");
	for (int trial = 0; trial < 100; ++trial) {
		const FeatureArchive a = random_archive(rng);
		EXPECT_EQ(decode_archive(encode_archive(a)), a);
		write_archive(dir / "a.farc", a);
		EXPECT_EQ(read_archive(dir / "a.farc"), a);
	}
	fs::remove_all(dir);
}

TEST(Archive, EmptyArchiveRoundTrips) {
	const std::string bytes = encode_archive(FeatureArchive{});
	EXPECT_EQ(bytes.size(), 12u);
	EXPECT_TRUE(decode_archive(bytes).records.empty());
}

TEST(Archive, LayoutIsLittleEndianFloat32) {
	FeatureArchive a;
	a.records.push_back(ArchiveRecord::from_matrix("ab", (Matrix(1, 2) << 1.0, -2.0).finished()));
	const std::string b = encode_archive(a);
	const unsigned char expected[] = {'F', 'A', 'R', 'C', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b',
									  1,   0,   0,   0,   2, 0, 0, 0, 0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
	ASSERT_EQ(b.size(), sizeof expected);
	for (std::size_t k = 0; k < b.size(); ++k) EXPECT_EQ((unsigned char)b[k], expected[k]) << "byte " << k;
}

TEST(Archive, CorruptionIsFormatErrorWithOffset) {
	std::mt19937_64 rng(1);
	FeatureArchive a;
	while (a.records.empty()) a = random_archive(rng);
	std::string bytes = encode_archive(a);

	std::string bad = bytes;
	bad[0] = 'X';
	try {
		decode_archive(bad);
		FAIL();
	} catch (const FormatError& e) {
		EXPECT_EQ(e.offset(), 0u);
	}
	bad = bytes;
	bad[4] = 2;
	EXPECT_THROW(decode_archive(bad), FormatError);
	EXPECT_THROW(decode_archive(bytes.substr(0, bytes.size() - 1)), FormatError);
	EXPECT_THROW(decode_archive(bytes + "z"), FormatError);
	EXPECT_THROW(decode_archive(""), FormatError);

	FeatureArchive dup;
	dup.records = {ArchiveRecord::from_matrix("a", Matrix::Zero(1, 1)), ArchiveRecord::from_matrix("a", Matrix::Zero(1, 1))};
	EXPECT_THROW(encode_archive(dup), InputContractError);
	FeatureArchive one;
	one.records = {dup.records[0]};
	std::string twice = encode_archive(one);
	const std::string record = twice.substr(12);
	twice[8] = 2;
	twice += record;
	try {
		decode_archive(twice);
		FAIL();
	} catch (const FormatError& e) {
		EXPECT_EQ(e.offset(), 12u + record.size() + 4u);
	}

	const fs::path dir = scratch_dir("corrupt");
	detail::write_file(dir / "bad.farc", "XXXX");
	EXPECT_THROW(read_archive(dir / "bad.farc"), FormatError);
	EXPECT_THROW(read_archive(dir / "missing.farc"), Error);
	fs::remove_all(dir);
}

TEST(Grouping, SequenceCountsAndErrors) {
	std::vector<Utterance> utts(4);
	const char* spk[] = {"a", "a", "b", "b"};
	for (int k = 0; k < 4; ++k) {
		utts[std::size_t(k)].id = "u" + std::to_string(k);
		utts[std::size_t(k)].frames = test::random_matrix(20 * (k + 1), 2, std::uint64_t(k));
		utts[std::size_t(k)].labels = {{"speaker", spk[k]}, {"noise", k == 3 ? "" : "n"}};
	}
	const Dataset ds(utts);
	const Dataset by_spk = group_sequences_by_label(ds, SeqLabel::Speaker);
	EXPECT_EQ(by_spk.num_sequences(), 2);
	EXPECT_EQ(by_spk.seq_of_utt, (std::vector<Eigen::Index>{0, 0, 1, 1}));
	EXPECT_EQ(group_sequences_by_label(by_spk, SeqLabel::UttId).num_sequences(), 4);
	EXPECT_THROW(group_sequences_by_label(ds, SeqLabel::Noise), DataError);
	for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(by_spk.utterances[k].frames, ds.utterances[k].frames);

	// pooled N: total scheduled segments is the same for every grouping
	std::mt19937_64 r1(3), r2(3);
	const auto s_utt = schedule_epoch(ds, r1, 20);
	const auto s_spk = schedule_epoch(by_spk, r2, 20);
	auto total = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
	EXPECT_EQ(total(s_utt.seq_counts), total(s_spk.seq_counts));
	EXPECT_EQ(s_spk.seq_counts, (std::vector<double>{3, 7}));
}

TEST(Manifest, SaveAndLoadDataset) {
	SyntheticSpec s;
	s.n_speakers = 2;
	s.n_utts_per_speaker = 3;
	const SyntheticCorpus c = generate_synthetic(s);
	const fs::path dir = scratch_dir("manifest");
	save_dataset(dir, "train", c.train);
	EXPECT_TRUE(fs::exists(dir / "train.tsv"));
	EXPECT_TRUE(fs::exists(dir / "train.labels.farc"));
	const Dataset back = load_manifest(dir / "train.tsv");
	ASSERT_EQ(back.size(), c.train.size());
	for (std::size_t k = 0; k < back.size(); ++k) {
		EXPECT_EQ(back.utterances[k].id, c.train.utterances[k].id);
		EXPECT_EQ(back.utterances[k].frames, c.train.utterances[k].frames);
		EXPECT_EQ(back.utterances[k].labels, c.train.utterances[k].labels);
		EXPECT_EQ(back.utterances[k].segment_classes, c.train.utterances[k].segment_classes);
	}
	detail::write_file(dir / "broken.tsv", "only\ttwo\n");
	EXPECT_THROW(load_manifest(dir / "broken.tsv"), Error);
	fs::remove_all(dir);
}

TEST(Synthetic, CountsAndLabels) {
	SyntheticSpec s;
	s.n_speakers = 2;
	s.n_utts_per_speaker = 3;
	const SyntheticCorpus c = generate_synthetic(s);
	EXPECT_EQ(c.train.size(), 6u);
	EXPECT_EQ(c.dev.size(), 2u * std::size_t(s.n_dev_utts_per_speaker));
	EXPECT_EQ(c.test_clean.size(), 2u * std::size_t(s.n_test_utts_per_speaker));
	for (const auto& u : c.test_clean.utterances) EXPECT_EQ(*u.label("domain"), kCleanDomain);
	for (const auto& u : c.test_shifted.utterances) EXPECT_EQ(*u.label("domain"), kShiftedDomain);
	std::set<std::string> ids;
	for (const Dataset* d : {&c.train, &c.dev, &c.test_clean, &c.test_shifted})
		for (const auto& u : d->utterances) {
			EXPECT_TRUE(ids.insert(u.id).second);
			EXPECT_GE(u.num_frames(), s.min_frames);
			EXPECT_LE(u.num_frames(), s.max_frames);
			EXPECT_EQ(u.num_frames() % s.width, 0);
			EXPECT_EQ(Eigen::Index(u.segment_classes.size()), u.num_frames());
		}
	SyntheticSpec bad = s;
	bad.dim = 3;
	EXPECT_THROW(generate_synthetic(bad), ConfigError);
}

TEST(Synthetic, DeterministicInSeed) {
	SyntheticSpec s;
	s.n_utts_per_speaker = 5;
	const auto a = generate_synthetic(s);
	const auto b = generate_synthetic(s);
	auto bytes = [](const Dataset& d) {
		FeatureArchive fa;
		for (const auto& u : d.utterances) fa.records.push_back(ArchiveRecord::from_matrix(u.id, u.frames));
		return encode_archive(fa);
	};
	EXPECT_EQ(bytes(a.train), bytes(b.train));
	EXPECT_EQ(bytes(a.test_shifted), bytes(b.test_shifted));
	s.seed = 2;
	EXPECT_NE(bytes(generate_synthetic(s).train), bytes(a.train));
}

TEST(Synthetic, ScaleSeparation) {
	SyntheticSpec s;
	s.noise_std = 0.0;
	const auto c = generate_synthetic(s);
	const auto f = SyntheticFactors::make(s);
	int varying = 0;
	for (const auto& u : c.train.utterances) {
		// frame minus its class template leaves the sequence-level offset
		Matrix residual(u.num_frames(), u.dim());
		for (Eigen::Index t = 0; t < u.num_frames(); ++t)
			residual.row(t) = u.frames.row(t) - f.templates[std::size_t(u.segment_classes[std::size_t(t)])].row(t % s.width);
		const Eigen::RowVectorXd mean = residual.colwise().mean();
		EXPECT_LT((residual.rowwise() - mean).cwiseAbs().maxCoeff(), 1e-5) << u.id;
		const std::set<int> classes(u.segment_classes.begin(), u.segment_classes.end());
		varying += classes.size() > 1;
	}
	EXPECT_GT(varying, int(c.train.size()) * 9 / 10);
}

TEST(Synthetic, RawProbeDegradesUnderShift) {
	const SyntheticCorpus c = generate_synthetic(SyntheticSpec{});
	const Dataset clean_train = c.train.filter("domain", kCleanDomain);
	const InvarianceReport r = invariance_report({}, clean_train, c.test_clean, c.test_shifted, {ReportFeature::Raw});
	const InvarianceRow& raw = *r.find(to_string(ReportFeature::Raw));
	EXPECT_GE(raw.shifted_error - raw.clean_error, 10.0);
}

} // namespace
} // namespace fhvae
