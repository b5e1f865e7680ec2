#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fhvae/gaussian.hpp"

/// Small dense and LSTM building blocks with explicit forward caches and
/// hand-written backward passes. Activations are column-major: one column
/// per sample in the minibatch.
namespace fhvae::nn {

using ParamSpan = std::span<double>;

namespace detail {

template <class Mat, class F>
void visit_storage(Mat& m, F&& f) {
	f(ParamSpan(const_cast<double*>(m.data()), static_cast<std::size_t>(m.size())));
}

inline Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

} // namespace detail

/// Fills every parameter visited by `f` with U(-scale, scale).
template <class Module>
void init_uniform(Module& m, std::mt19937_64& rng, double scale) {
	std::uniform_real_distribution<double> dist(-scale, scale);
	m.visit([&](ParamSpan p) {
		for (double& v : p) v = dist(rng);
	});
}

template <class Module>
void set_zero(Module& m) {
	m.visit([](ParamSpan p) { std::fill(p.begin(), p.end(), 0.0); });
}

template <class Module>
std::size_t parameter_count(const Module& m) {
	std::size_t n = 0;
	m.visit([&](ParamSpan p) { n += p.size(); });
	return n;
}

/// y = W x + b
struct Dense {
	Matrix weight;
	Vector bias;

	Dense() = default;
	Dense(int in, int out) : weight(Matrix::Zero(out, in)), bias(Vector::Zero(out)) {}

	Eigen::Index in() const { return weight.cols(); }
	Eigen::Index out() const { return weight.rows(); }

	Matrix forward(const Matrix& x) const { return (weight * x).colwise() + bias; }

	/// Accumulates parameter gradients into `grad` and returns dL/dx.
	Matrix backward(const Matrix& x, const Matrix& dy, Dense& grad) const {
		accumulate(x, dy, grad);
		return weight.transpose() * dy;
	}

	void accumulate(const Matrix& x, const Matrix& dy, Dense& grad) const {
		grad.weight.noalias() += dy * x.transpose();
		grad.bias += dy.rowwise().sum();
	}

	template <class F>
	void visit(F&& f) {
		detail::visit_storage(weight, f);
		detail::visit_storage(bias, f);
	}
	template <class F>
	void visit(F&& f) const {
		detail::visit_storage(weight, f);
		detail::visit_storage(bias, f);
	}
};

/// Stack of tanh dense layers.
struct Mlp {
	std::vector<Dense> layers;

	Mlp() = default;
	Mlp(int in, int units, int depth) {
		for (int l = 0; l < depth; ++l) layers.emplace_back(l == 0 ? in : units, units);
	}

	struct Cache {
		std::vector<Matrix> inputs; // input to each layer
		Matrix output;
	};

	Cache forward(const Matrix& x) const {
		Cache c;
		Matrix h = x;
		for (const auto& layer : layers) {
			c.inputs.push_back(h);
			h = layer.forward(h).array().tanh().matrix();
		}
		c.output = std::move(h);
		return c;
	}

	Matrix backward(const Cache& c, const Matrix& dout, Mlp& grad) const {
		Matrix d = dout;
		for (std::size_t l = layers.size(); l-- > 0;) {
			const Matrix& out = (l + 1 == layers.size()) ? c.output : c.inputs[l + 1];
			Matrix dpre = (d.array() * (1.0 - out.array().square())).matrix();
			d = layers[l].backward(c.inputs[l], dpre, grad.layers[l]);
		}
		return d;
	}

	template <class F>
	void visit(F&& f) {
		for (auto& l : layers) l.visit(f);
	}
	template <class F>
	void visit(F&& f) const {
		for (const auto& l : layers) l.visit(f);
	}
};

/// One LSTM layer. Gate rows are ordered input, forget, cell, output.
struct LstmLayer {
	Matrix wx; // 4H x in
	Matrix wh; // 4H x H
	Vector bias;

	LstmLayer() = default;
	LstmLayer(int in, int units)
		: wx(Matrix::Zero(4 * units, in)), wh(Matrix::Zero(4 * units, units)), bias(Vector::Zero(4 * units)) {}

	Eigen::Index units() const { return wh.cols(); }

	template <class F>
	void visit(F&& f) {
		detail::visit_storage(wx, f);
		detail::visit_storage(wh, f);
		detail::visit_storage(bias, f);
	}
	template <class F>
	void visit(F&& f) const {
		detail::visit_storage(wx, f);
		detail::visit_storage(wh, f);
		detail::visit_storage(bias, f);
	}
};

/// Multi-layer LSTM unrolled over a fixed number of steps. Optionally the
/// initial hidden state of every layer is tanh(init_l * s) for a
/// conditioning vector s; otherwise it is zero. Cell state starts at zero.
struct Lstm {
	std::vector<LstmLayer> layers;
	std::vector<Dense> init; // empty when the initial state is zero

	Lstm() = default;
	Lstm(int in, int units, int depth, int init_dim = 0) {
		for (int l = 0; l < depth; ++l) {
			layers.emplace_back(l == 0 ? in : units, units);
			if (init_dim > 0) init.emplace_back(init_dim, units);
		}
	}

	struct LayerCache {
		std::vector<Matrix> x;     // input per step
		std::vector<Matrix> gates; // activated gates per step, 4H x B
		std::vector<Matrix> c;     // cell state per step
		std::vector<Matrix> tanh_c;
		std::vector<Matrix> h;
		Matrix h0;
	};
	struct Cache {
		std::vector<LayerCache> layers;
		Matrix init_input;
	};

	/// Returns the cache; top-layer outputs are `cache.layers.back().h`.
	Cache forward(const std::vector<Matrix>& steps, const Matrix* init_input = nullptr) const {
		Cache cache;
		cache.layers.resize(layers.size());
		const Eigen::Index batch = steps.front().cols();
		if (!init.empty()) cache.init_input = *init_input;
		const std::vector<Matrix>* input = &steps;
		for (std::size_t l = 0; l < layers.size(); ++l) {
			const LstmLayer& L = layers[l];
			LayerCache& lc = cache.layers[l];
			const Eigen::Index H = L.units();
			lc.h0 = init.empty() ? Matrix::Zero(H, batch) : Matrix(init[l].forward(*init_input).array().tanh().matrix());
			Matrix h = lc.h0;
			Matrix c = Matrix::Zero(H, batch);
			for (const Matrix& x : *input) {
				Matrix pre = (L.wx * x + L.wh * h).colwise() + L.bias;
				Matrix gates(4 * H, batch);
				gates.topRows(2 * H) = detail::sigmoid(pre.topRows(2 * H));
				gates.middleRows(2 * H, H) = pre.middleRows(2 * H, H).array().tanh().matrix();
				gates.bottomRows(H) = detail::sigmoid(pre.bottomRows(H));
				c = (gates.middleRows(H, H).array() * c.array() +
					 gates.topRows(H).array() * gates.middleRows(2 * H, H).array())
						.matrix();
				Matrix tc = c.array().tanh().matrix();
				h = (gates.bottomRows(H).array() * tc.array()).matrix();
				lc.x.push_back(x);
				lc.gates.push_back(std::move(gates));
				lc.c.push_back(c);
				lc.tanh_c.push_back(std::move(tc));
				lc.h.push_back(h);
			}
			input = &lc.h;
		}
		return cache;
	}

	/// `dh_top[t]` is dL/dh_t for the top layer. Returns dL/d(step input) per
	/// step; gradient w.r.t. the init input is accumulated into `dinit` when
	/// non-null.
	std::vector<Matrix> backward(const Cache& cache, std::vector<Matrix> dh_top, Lstm& grad,
								 Matrix* dinit = nullptr) const {
		std::vector<Matrix> dh_layer = std::move(dh_top);
		for (std::size_t l = layers.size(); l-- > 0;) {
			const LstmLayer& L = layers[l];
			const LayerCache& lc = cache.layers[l];
			const Eigen::Index H = L.units();
			const std::size_t T = lc.h.size();
			const Eigen::Index batch = lc.h0.cols();
			std::vector<Matrix> dx(T);
			Matrix dh_next = Matrix::Zero(H, batch);
			Matrix dc_next = Matrix::Zero(H, batch);
			Matrix dpre(4 * H, batch);
			for (std::size_t t = T; t-- > 0;) {
				const Matrix& g = lc.gates[t];
				const auto i = g.topRows(H).array();
				const auto f = g.middleRows(H, H).array();
				const auto gg = g.middleRows(2 * H, H).array();
				const auto o = g.bottomRows(H).array();
				const Matrix& c_prev_ref = t > 0 ? lc.c[t - 1] : Matrix(Matrix::Zero(H, batch));
				const Matrix& h_prev = t > 0 ? lc.h[t - 1] : lc.h0;
				Matrix dh = dh_layer[t] + dh_next;
				const auto tc = lc.tanh_c[t].array();
				Matrix dc = (dh.array() * o * (1.0 - tc.square()) + dc_next.array()).matrix();
				dpre.topRows(H) = (dc.array() * gg * i * (1.0 - i)).matrix();
				dpre.middleRows(H, H) = (dc.array() * c_prev_ref.array() * f * (1.0 - f)).matrix();
				dpre.middleRows(2 * H, H) = (dc.array() * i * (1.0 - gg.square())).matrix();
				dpre.bottomRows(H) = (dh.array() * tc * o * (1.0 - o)).matrix();
				dc_next = (dc.array() * f).matrix();
				LstmLayer& G = grad.layers[l];
				G.wx.noalias() += dpre * lc.x[t].transpose();
				G.wh.noalias() += dpre * h_prev.transpose();
				G.bias += dpre.rowwise().sum();
				dx[t].noalias() = L.wx.transpose() * dpre;
				dh_next.noalias() = L.wh.transpose() * dpre;
			}
			if (!init.empty()) {
				Matrix dpre_init = (dh_next.array() * (1.0 - lc.h0.array().square())).matrix();
				Matrix dz = init[l].backward(cache.init_input, dpre_init, grad.init[l]);
				if (dinit != nullptr) *dinit += dz;
			}
			dh_layer = std::move(dx);
		}
		return dh_layer;
	}

	template <class F>
	void visit(F&& f) {
		for (auto& l : layers) l.visit(f);
		for (auto& d : init) d.visit(f);
	}
	template <class F>
	void visit(F&& f) const {
		for (const auto& l : layers) l.visit(f);
		for (const auto& d : init) d.visit(f);
	}
};

} // namespace fhvae::nn
