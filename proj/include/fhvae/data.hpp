#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fhvae/error.hpp"
#include "fhvae/gaussian.hpp"

namespace fhvae {

/// One sequence of feature frames (T x D) plus its labels.
struct Utterance {
	std::string id;
	Matrix frames;
	std::map<std::string, std::string> labels; // speaker, noise, domain
	std::vector<int> segment_classes;          // per frame; synthetic data only

	Eigen::Index num_frames() const { return frames.rows(); }
	Eigen::Index dim() const { return frames.cols(); }

	const std::string* label(const std::string& key) const {
		auto it = labels.find(key);
		return it == labels.end() ? nullptr : &it->second;
	}
};

enum class SeqLabel { UttId, Speaker, Noise };

inline SeqLabel parse_seq_label(const std::string& s) {
	if (s == "uttid") return SeqLabel::UttId;
	if (s == "speaker") return SeqLabel::Speaker;
	if (s == "noise") return SeqLabel::Noise;
	throw ConfigError("unknown sequence label '" + s + "' (expected uttid|speaker|noise)");
}
inline std::string to_string(SeqLabel l) {
	switch (l) {
	case SeqLabel::UttId: return "uttid";
	case SeqLabel::Speaker: return "speaker";
	case SeqLabel::Noise: return "noise";
	}
	return "uttid";
}

/// Utterances plus the mapping from utterance to sequence (s-vector row).
/// By default each utterance is its own sequence.
struct Dataset {
	std::vector<Utterance> utterances;
	std::vector<Eigen::Index> seq_of_utt;
	std::vector<std::string> seq_ids;

	Dataset() = default;
	explicit Dataset(std::vector<Utterance> utts) : utterances(std::move(utts)) { reset_sequences(); }

	std::size_t size() const { return utterances.size(); }
	bool empty() const { return utterances.empty(); }
	Eigen::Index num_sequences() const { return Eigen::Index(seq_ids.size()); }

	void reset_sequences() {
		seq_of_utt.resize(utterances.size());
		seq_ids.clear();
		for (std::size_t k = 0; k < utterances.size(); ++k) {
			seq_of_utt[k] = Eigen::Index(k);
			seq_ids.push_back(utterances[k].id);
		}
	}

	void validate() const {
		std::unordered_set<std::string> seen;
		for (const auto& u : utterances) {
			if (u.num_frames() < 1) throw DataError("utterance '" + u.id + "' has no frames");
			if (!u.frames.allFinite()) throw DataError("utterance '" + u.id + "' has non-finite frames");
			if (!seen.insert(u.id).second) throw DataError("duplicate utterance id '" + u.id + "'");
		}
	}

	/// Utterances whose `key` label equals `value`, sequences reset to identity.
	Dataset filter(const std::string& key, const std::string& value) const {
		std::vector<Utterance> out;
		for (const auto& u : utterances)
			if (const auto* l = u.label(key); l && *l == value) out.push_back(u);
		return Dataset(std::move(out));
	}
};

/// Utterances sharing the label value share one sequence index. Frames are
/// untouched; `uttid` restores the identity mapping.
inline Dataset group_sequences_by_label(Dataset ds, SeqLabel label) {
	if (label == SeqLabel::UttId) {
		ds.reset_sequences();
		return ds;
	}
	const std::string key = label == SeqLabel::Speaker ? "speaker" : "noise";
	std::unordered_map<std::string, Eigen::Index> index;
	ds.seq_ids.clear();
	ds.seq_of_utt.assign(ds.size(), 0);
	for (std::size_t k = 0; k < ds.size(); ++k) {
		const auto* value = ds.utterances[k].label(key);
		if (value == nullptr || value->empty())
			throw DataError("utterance '" + ds.utterances[k].id + "' has no " + key + " label");
		auto [it, inserted] = index.emplace(*value, Eigen::Index(ds.seq_ids.size()));
		if (inserted) ds.seq_ids.push_back(key + ":" + *value);
		ds.seq_of_utt[k] = it->second;
	}
	return ds;
}

// ---------------------------------------------------------------------------
// FARC feature archive: "FARC", u32 version=1, u32 count, then per record
// u32 id_len, id bytes, u32 T, u32 D, T*D float32 row-major. Little-endian.

struct ArchiveRecord {
	std::string id;
	std::uint32_t rows = 0;
	std::uint32_t cols = 0;
	std::vector<float> data; // row-major

	static ArchiveRecord from_matrix(std::string id, const Matrix& m) {
		ArchiveRecord r{std::move(id), std::uint32_t(m.rows()), std::uint32_t(m.cols()), {}};
		r.data.resize(std::size_t(m.rows()) * std::size_t(m.cols()));
		for (Eigen::Index i = 0; i < m.rows(); ++i)
			for (Eigen::Index j = 0; j < m.cols(); ++j) r.data[std::size_t(i) * r.cols + std::size_t(j)] = float(m(i, j));
		return r;
	}

	Matrix to_matrix() const {
		Matrix m(rows, cols);
		for (std::uint32_t i = 0; i < rows; ++i)
			for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = double(data[std::size_t(i) * cols + j]);
		return m;
	}

	bool operator==(const ArchiveRecord& o) const {
		return id == o.id && rows == o.rows && cols == o.cols &&
			   std::memcmp(data.data(), o.data.data(), data.size() * sizeof(float)) == 0 && data.size() == o.data.size();
	}
};

struct FeatureArchive {
	std::vector<ArchiveRecord> records;
	bool operator==(const FeatureArchive&) const = default;

	const ArchiveRecord* find(const std::string& id) const {
		for (const auto& r : records)
			if (r.id == id) return &r;
		return nullptr;
	}
};

inline constexpr std::array<char, 4> kArchiveMagic = {'F', 'A', 'R', 'C'};
inline constexpr std::uint32_t kArchiveVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
	for (int k = 0; k < 4; ++k) out.push_back(char((v >> (8 * k)) & 0xFFu));
}

class ByteReader {
public:
	explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

	std::uint64_t offset() const { return pos_; }

	void need(std::size_t n, const char* what) const {
		if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated archive while reading ") + what, pos_);
	}
	std::uint32_t u32(const char* what) {
		need(4, what);
		std::uint32_t v = 0;
		for (int k = 0; k < 4; ++k) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
		pos_ += 4;
		return v;
	}
	std::string str(std::size_t n, const char* what) {
		need(n, what);
		std::string s = bytes_.substr(pos_, n);
		pos_ += n;
		return s;
	}
	bool done() const { return pos_ == bytes_.size(); }

private:
	std::string bytes_;
	std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw Error("cannot open '" + path.string() + "' for reading");
	std::ostringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
	if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) throw Error("cannot open '" + path.string() + "' for writing");
	out.write(bytes.data(), std::streamsize(bytes.size()));
	if (!out) throw Error("write to '" + path.string() + "' failed");
}

} // namespace detail

inline std::string encode_archive(const FeatureArchive& a) {
	std::unordered_set<std::string> ids;
	for (const auto& r : a.records) {
		if (!ids.insert(r.id).second) throw InputContractError("write_archive: duplicate id '" + r.id + "'");
		if (r.data.size() != std::size_t(r.rows) * r.cols)
			throw InputContractError("write_archive: record '" + r.id + "' has inconsistent size");
	}
	std::string out(kArchiveMagic.begin(), kArchiveMagic.end());
	detail::put_u32(out, kArchiveVersion);
	detail::put_u32(out, std::uint32_t(a.records.size()));
	for (const auto& r : a.records) {
		detail::put_u32(out, std::uint32_t(r.id.size()));
		out += r.id;
		detail::put_u32(out, r.rows);
		detail::put_u32(out, r.cols);
		for (float f : r.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
	}
	return out;
}

inline FeatureArchive decode_archive(std::string bytes) {
	detail::ByteReader in(std::move(bytes));
	in.need(4, "magic");
	const std::string magic = in.str(4, "magic");
	if (!std::equal(magic.begin(), magic.end(), kArchiveMagic.begin())) throw FormatError("bad archive magic", 0);
	const std::uint64_t version_at = in.offset();
	if (in.u32("version") != kArchiveVersion) throw FormatError("unsupported archive version", version_at);
	const std::uint32_t count = in.u32("record count");
	FeatureArchive a;
	std::unordered_set<std::string> ids;
	for (std::uint32_t k = 0; k < count; ++k) {
		ArchiveRecord r;
		const std::uint32_t id_len = in.u32("id length");
		const std::uint64_t id_at = in.offset();
		r.id = in.str(id_len, "id");
		if (!ids.insert(r.id).second) throw FormatError("duplicate record id '" + r.id + "'", id_at);
		r.rows = in.u32("T");
		r.cols = in.u32("D");
		const std::uint64_t n = std::uint64_t(r.rows) * r.cols;
		in.need(std::size_t(n * 4), "frame data");
		r.data.resize(std::size_t(n));
		for (auto& f : r.data) f = std::bit_cast<float>(in.u32("frame data"));
		a.records.push_back(std::move(r));
	}
	if (!in.done()) throw FormatError("trailing bytes after last record", in.offset());
	return a;
}

inline void write_archive(const std::filesystem::path& path, const FeatureArchive& a) {
	detail::write_file(path, encode_archive(a));
}

/// Validates the whole file before returning anything.
inline FeatureArchive read_archive(const std::filesystem::path& path) { return decode_archive(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Manifest: one line per utterance, tab-separated
//   utt_id  archive_path  speaker  noise  domain
// Archive paths are relative to the manifest's directory unless absolute.
// Per-frame class labels, when present, live in "<archive stem>.labels.farc".

struct ManifestEntry {
	std::string utt_id;
	std::string archive;
	std::string speaker;
	std::string noise;
	std::string domain;
};

inline std::filesystem::path labels_archive_path(const std::filesystem::path& archive) {
	auto p = archive;
	p.replace_extension();
	p += ".labels.farc";
	return p;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
	std::istringstream in(detail::read_file(path));
	std::vector<ManifestEntry> out;
	std::string line;
	int lineno = 0;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty() || line[0] == '#') continue;
		std::vector<std::string> f;
		std::size_t start = 0;
		for (;;) {
			auto tab = line.find('\t', start);
			f.push_back(line.substr(start, tab - start));
			if (tab == std::string::npos) break;
			start = tab + 1;
		}
		if (f.size() != 5)
			throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
		out.push_back({f[0], f[1], f[2], f[3], f[4]});
	}
	return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
	std::string out;
	for (const auto& e : entries) out += e.utt_id + '\t' + e.archive + '\t' + e.speaker + '\t' + e.noise + '\t' + e.domain + '\n';
	detail::write_file(path, out);
}

/// Loads every utterance of a manifest, reading each archive once.
inline Dataset load_manifest(const std::filesystem::path& manifest) {
	const auto entries = read_manifest(manifest);
	const auto base = manifest.parent_path();
	std::map<std::string, FeatureArchive> archives;
	std::map<std::string, FeatureArchive> label_archives;
	std::vector<Utterance> utts;
	for (const auto& e : entries) {
		std::filesystem::path ap = e.archive;
		if (ap.is_relative()) ap = base / ap;
		const std::string key = ap.string();
		if (!archives.count(key)) {
			archives.emplace(key, read_archive(ap));
			const auto lp = labels_archive_path(ap);
			if (std::filesystem::exists(lp)) label_archives.emplace(key, read_archive(lp));
		}
		const auto* rec = archives.at(key).find(e.utt_id);
		if (rec == nullptr) throw DataError("utterance '" + e.utt_id + "' not found in " + key);
		Utterance u;
		u.id = e.utt_id;
		u.frames = rec->to_matrix();
		u.labels = {{"speaker", e.speaker}, {"noise", e.noise}, {"domain", e.domain}};
		if (auto it = label_archives.find(key); it != label_archives.end()) {
			if (const auto* lr = it->second.find(e.utt_id)) {
				for (float v : lr->data) u.segment_classes.push_back(int(v));
			}
		}
		utts.push_back(std::move(u));
	}
	Dataset ds(std::move(utts));
	ds.validate();
	return ds;
}

/// Writes `<dir>/<name>.farc`, its labels archive (if any utterance has
/// class labels) and `<dir>/<name>.tsv`.
inline void save_dataset(const std::filesystem::path& dir, const std::string& name, const Dataset& ds) {
	FeatureArchive feats;
	FeatureArchive labels;
	std::vector<ManifestEntry> entries;
	const std::string archive = name + ".farc";
	for (const auto& u : ds.utterances) {
		feats.records.push_back(ArchiveRecord::from_matrix(u.id, u.frames));
		if (!u.segment_classes.empty()) {
			Matrix l(Eigen::Index(u.segment_classes.size()), 1);
			for (std::size_t t = 0; t < u.segment_classes.size(); ++t) l(Eigen::Index(t), 0) = u.segment_classes[t];
			labels.records.push_back(ArchiveRecord::from_matrix(u.id, l));
		}
		auto get = [&](const char* k) { return u.label(k) ? *u.label(k) : std::string(); };
		entries.push_back({u.id, archive, get("speaker"), get("noise"), get("domain")});
	}
	write_archive(dir / archive, feats);
	if (!labels.records.empty()) write_archive(labels_archive_path(dir / archive), labels);
	write_manifest(dir / (name + ".tsv"), entries);
}

// ---------------------------------------------------------------------------
// Synthetic two-domain corpus.

struct SyntheticSpec {
	int n_speakers = 4;
	int n_noise_types = 3;
	int n_utts_per_speaker = 50;
	int n_dev_utts_per_speaker = 5;
	int n_test_utts_per_speaker = 10;
	int min_frames = 60;
	int max_frames = 140;
	int dim = 20;
	int width = 20;
	int n_classes = 8;
	double template_scale = 1.0;
	double speaker_scale = 0.5;
	double tilt_scale = 1.0;
	double noise_std = 0.3;
	double shift_offset_scale = 2.0;
	double shift_noise_mult = 1.5;
	/// Fraction of train/dev utterances drawn from the shifted domain.
	double shifted_train_fraction = 0.25;
	std::uint64_t seed = 1;

	void validate() const {
		if (n_speakers < 1 || n_noise_types < 1 || n_utts_per_speaker < 1 || n_dev_utts_per_speaker < 1 ||
			n_test_utts_per_speaker < 1)
			throw ConfigError("synthetic: counts must be >= 1");
		if (dim < 4) throw ConfigError("synthetic: dim must be >= 4");
		if (n_classes < 2) throw ConfigError("synthetic: n_classes must be >= 2");
		if (width < 1) throw ConfigError("synthetic: width must be >= 1");
		if (min_frames < width || max_frames < min_frames)
			throw ConfigError("synthetic: need width <= min_frames <= max_frames");
		if (!(noise_std >= 0) || !(shift_noise_mult >= 0) || !(template_scale > 0))
			throw ConfigError("synthetic: scales must be non-negative");
		if (!(shifted_train_fraction >= 0 && shifted_train_fraction < 1))
			throw ConfigError("synthetic: shifted_train_fraction must be in [0, 1)");
	}
};

/// Train/dev sets mix both domains; the test sets are single-domain.
struct SyntheticCorpus {
	Dataset train;
	Dataset dev;
	Dataset test_clean;
	Dataset test_shifted;
};

inline const std::string kCleanDomain = "clean";
inline const std::string kShiftedDomain = "shifted";

/// Fixed generative factors of a synthetic corpus, exposed for tests.
struct SyntheticFactors {
	std::vector<Matrix> templates; // per class, W x D
	Matrix speaker_bias;           // n_speakers x D
	Matrix tilt_shapes;            // (n_noise_types + 1) x D, last row is the shifted family

	static SyntheticFactors make(const SyntheticSpec& s) {
		std::mt19937_64 rng(s.seed ^ 0x5eedfac7ULL);
		std::normal_distribution<double> n01(0.0, 1.0);
		SyntheticFactors f;
		for (int c = 0; c < s.n_classes; ++c) {
			Vector env(s.dim);
			for (auto& v : env) v = s.template_scale * n01(rng);
			const double phase = 2.0 * std::numbers::pi * c / s.n_classes;
			Matrix t(s.width, s.dim);
			for (int k = 0; k < s.width; ++k) {
				const double mod = 0.75 + 0.25 * std::cos(2.0 * std::numbers::pi * k / s.width + phase);
				t.row(k) = (env * mod).transpose();
			}
			f.templates.push_back(std::move(t));
		}
		f.speaker_bias.resize(s.n_speakers, s.dim);
		for (Eigen::Index k = 0; k < f.speaker_bias.size(); ++k) f.speaker_bias.data()[k] = s.speaker_scale * n01(rng);
		f.tilt_shapes.resize(s.n_noise_types + 1, s.dim);
		for (int k = 0; k <= s.n_noise_types; ++k) {
			for (int d = 0; d < s.dim; ++d) {
				const double u = double(d) / double(s.dim - 1);
				f.tilt_shapes(k, d) = k == 0 ? u - 0.5 : std::cos((k + 1) * std::numbers::pi * u + k);
			}
			const double rms = f.tilt_shapes.row(k).norm() / std::sqrt(double(s.dim));
			f.tilt_shapes.row(k) /= rms;
		}
		return f;
	}
};

namespace detail {

inline Utterance synth_utterance(const SyntheticSpec& s, const SyntheticFactors& f, std::mt19937_64& rng,
								 const std::string& id, int speaker, bool shifted) {
	std::normal_distribution<double> n01(0.0, 1.0);
	std::uniform_real_distribution<double> amp(0.5, 1.5);
	const int min_seg = (s.min_frames + s.width - 1) / s.width;
	const int max_seg = std::max(min_seg, s.max_frames / s.width);
	const int n_seg = std::uniform_int_distribution<int>(min_seg, max_seg)(rng);
	const int noise_type = shifted ? s.n_noise_types : std::uniform_int_distribution<int>(0, s.n_noise_types - 1)(rng);
	const double tilt_amp = (shifted ? s.shift_offset_scale : s.tilt_scale) * amp(rng);
	const double sd = shifted ? s.noise_std * s.shift_noise_mult : s.noise_std;
	const Vector offset = (f.speaker_bias.row(speaker) + tilt_amp * f.tilt_shapes.row(noise_type)).transpose();

	Utterance u;
	u.id = id;
	u.frames.resize(Eigen::Index(n_seg) * s.width, s.dim);
	std::uniform_int_distribution<int> cls(0, s.n_classes - 1);
	for (int n = 0; n < n_seg; ++n) {
		const int c = cls(rng);
		for (int k = 0; k < s.width; ++k) {
			const Eigen::Index t = Eigen::Index(n) * s.width + k;
			for (int d = 0; d < s.dim; ++d) {
				// stored at float precision so archives round-trip the in-memory corpus
				u.frames(t, d) = double(float(f.templates[c](k, d) + offset[d] + sd * n01(rng)));
			}
			u.segment_classes.push_back(c);
		}
	}
	u.labels = {{"speaker", "spk" + std::to_string(speaker)},
				{"noise", shifted ? "shift" + std::to_string(noise_type) : "tilt" + std::to_string(noise_type)},
				{"domain", shifted ? kShiftedDomain : kCleanDomain}};
	return u;
}

inline Dataset synth_set(const SyntheticSpec& s, const SyntheticFactors& f, std::mt19937_64& rng,
						 const std::string& prefix, int per_speaker, double shifted_fraction, int force_domain) {
	std::vector<Utterance> utts;
	for (int spk = 0; spk < s.n_speakers; ++spk) {
		for (int k = 0; k < per_speaker; ++k) {
			bool shifted;
			if (force_domain >= 0) {
				shifted = force_domain == 1;
			} else {
				// deterministic interleave: utterance k is shifted when the running share falls behind
				shifted = std::floor((k + 1) * shifted_fraction) > std::floor(k * shifted_fraction);
			}
			char buf[64];
			std::snprintf(buf, sizeof buf, "%s_spk%d_%04d", prefix.c_str(), spk, k);
			utts.push_back(synth_utterance(s, f, rng, buf, spk, shifted));
		}
	}
	return Dataset(std::move(utts));
}

} // namespace detail

/// Deterministic in `spec.seed`.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
	spec.validate();
	const auto factors = SyntheticFactors::make(spec);
	std::mt19937_64 rng(spec.seed);
	SyntheticCorpus c;
	c.train = detail::synth_set(spec, factors, rng, "train", spec.n_utts_per_speaker, spec.shifted_train_fraction, -1);
	c.dev = detail::synth_set(spec, factors, rng, "dev", spec.n_dev_utts_per_speaker, spec.shifted_train_fraction, -1);
	c.test_clean = detail::synth_set(spec, factors, rng, "testA", spec.n_test_utts_per_speaker, 0.0, 0);
	c.test_shifted = detail::synth_set(spec, factors, rng, "testB", spec.n_test_utts_per_speaker, 0.0, 1);
	return c;
}

} // namespace fhvae
