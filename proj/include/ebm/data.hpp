#pragma once

#include "ebm/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace ebm {

/// Grayscale image with intensities as doubles (row r, column c).
struct Image {
    Mat pixels;
    int max_value = 255;

    Index rows() const { return pixels.rows(); }
    Index cols() const { return pixels.cols(); }
};

namespace detail {

inline void skip_pgm_space(std::istream& in) {
    for (;;) {
        const int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            return;
        }
    }
}

}  // namespace detail

/// Reads binary PGM (P5), 8 or 16 bits per pixel (16-bit samples are big-endian).
inline Image read_pgm(std::istream& in) {
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5") {
        throw Error("read_pgm: not a binary PGM (P5) stream");
    }
    long w = 0, h = 0, maxv = 0;
    detail::skip_pgm_space(in);
    in >> w;
    detail::skip_pgm_space(in);
    in >> h;
    detail::skip_pgm_space(in);
    in >> maxv;
    if (!in || w <= 0 || h <= 0 || maxv <= 0 || maxv > 65535) {
        throw Error("read_pgm: malformed header");
    }
    in.get();
    Image img{Mat(h, w), static_cast<int>(maxv)};
    const bool wide = maxv > 255;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * (wide ? 2 : 1)));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw Error("read_pgm: truncated pixel data");
    }
    for (long r = 0; r < h; ++r) {
        for (long c = 0; c < w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r * w + c);
            img.pixels(r, c) = wide ? double((buf[2 * k] << 8) | buf[2 * k + 1]) : double(buf[k]);
        }
    }
    return img;
}

inline Image read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot open " + path);
    }
    return read_pgm(f);
}

/// Writes binary PGM, rounding and clipping to [0, max_value].
inline void write_pgm(std::ostream& out, const Mat& pixels, int max_value = 255) {
    if (max_value < 1 || max_value > 65535) {
        throw Error("write_pgm: max value must lie in [1, 65535]");
    }
    out << "P5\n" << pixels.cols() << ' ' << pixels.rows() << '\n' << max_value << '\n';
    const bool wide = max_value > 255;
    for (Index r = 0; r < pixels.rows(); ++r) {
        for (Index c = 0; c < pixels.cols(); ++c) {
            const double v = std::clamp(std::round(pixels(r, c)), 0.0, double(max_value));
            const auto q = static_cast<unsigned>(v);
            if (wide) {
                out.put(static_cast<char>(q >> 8));
            }
            out.put(static_cast<char>(q & 0xFF));
        }
    }
}

inline void write_pgm(const std::string& path, const Mat& pixels, int max_value = 255) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot write " + path);
    }
    write_pgm(f, pixels, max_value);
}

/// Averages factor x factor pixel blocks; trailing rows/columns that do not fill a block are dropped.
inline Image downsample(const Image& im, Index factor) {
    if (factor < 1) {
        throw Error("downsample: factor must be >= 1");
    }
    const Index rows = im.pixels.rows() / factor, cols = im.pixels.cols() / factor;
    if (rows == 0 || cols == 0) {
        throw Error("downsample: image smaller than one block");
    }
    Image out = im;
    out.pixels.resize(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            out.pixels(r, c) = im.pixels.block(r * factor, c * factor, factor, factor).mean();
        }
    }
    return out;
}

/// Affinely maps pixels to [0, 255] (a constant image maps to mid-gray).
inline Mat to_display(const Mat& pixels) {
    const double lo = pixels.minCoeff();
    const double hi = pixels.maxCoeff();
    if (hi - lo <= 0) {
        return Mat::Constant(pixels.rows(), pixels.cols(), 127.5);
    }
    return ((pixels.array() - lo) * (255.0 / (hi - lo))).matrix();
}

/// Tiles square filters (rows of F, each side x side, row-major) into one image.
inline Mat filter_mosaic(const Mat& F, Index side, Index per_row, int border = 1) {
    if (side * side != F.cols()) {
        throw DimensionError("filter_mosaic: filters are not side x side");
    }
    const Index n = F.rows();
    const Index grid_rows = (n + per_row - 1) / per_row;
    Mat out = Mat::Constant(grid_rows * (side + border) + border, per_row * (side + border) + border, 0.0);
    for (Index k = 0; k < n; ++k) {
        const Vec f = F.row(k).transpose();
        const double a = std::max(f.cwiseAbs().maxCoeff(), 1e-300);
        const Index r0 = border + (k / per_row) * (side + border);
        const Index c0 = border + (k % per_row) * (side + border);
        for (Index r = 0; r < side; ++r) {
            for (Index c = 0; c < side; ++c) {
                out(r0 + r, c0 + c) = 127.5 + 127.5 * f[r * side + c] / a;
            }
        }
    }
    return out;
}

enum class Stage { Raw, Centered, Whitened };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Raw: return "raw";
        case Stage::Centered: return "centered";
        case Stage::Whitened: return "whitened";
    }
    return "raw";
}

/// Patches as rows (each patch flattened row-major, eyes concatenated).
struct PatchBatch {
    Mat data;
    Index height = 0;
    Index width = 0;
    Index eyes = 1;
    Stage stage = Stage::Raw;

    Index count() const { return data.rows(); }
    Index dim() const { return data.cols(); }
};

inline void check_corpus(const std::vector<Image>& images, Index h, Index w) {
    if (images.empty()) {
        throw Error("empty image corpus");
    }
    if (h < 1 || w < 1) {
        throw Error("patch size must be positive");
    }
    for (const auto& im : images) {
        if (im.rows() < h || im.cols() < w) {
            throw Error("patch size exceeds an image dimension");
        }
    }
}

inline void copy_patch(const Image& im, Index r0, Index c0, Index size, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> dst) {
    for (Index r = 0; r < size; ++r) {
        for (Index c = 0; c < size; ++c) {
            dst[r * size + c] = im.pixels(r0 + r, c0 + c);
        }
    }
}

/// `count` size x size patches from uniformly random images at uniformly random
/// valid positions. Patch k draws from the stream (seed, "patch", k).
/// When `positions` is given it receives (image, row, col) per patch.
inline PatchBatch extract_patches(const std::vector<Image>& images, Index size, Index count, std::uint64_t seed,
                                  std::vector<std::array<Index, 3>>* positions = nullptr) {
    check_corpus(images, size, size);
    PatchBatch out{Mat(count, size * size), size, size, 1, Stage::Raw};
    if (positions) {
        positions->assign(static_cast<std::size_t>(count), {0, 0, 0});
    }
    parallel_for(count, [&](Index k) {
        Rng rng = make_rng(seed, "patch", static_cast<std::uint64_t>(k));
        std::uniform_int_distribution<std::size_t> pick_img(0, images.size() - 1);
        const Image& im = images[pick_img(rng)];
        std::uniform_int_distribution<Index> pr(0, im.rows() - size), pc(0, im.cols() - size);
        const Index r0 = pr(rng), c0 = pc(rng);
        copy_patch(im, r0, c0, size, out.data.row(k));
        if (positions) {
            (*positions)[static_cast<std::size_t>(k)] = {Index(&im - images.data()), r0, c0};
        }
    });
    return out;
}

/// Optional log(1 + I), then removal of the per-pixel dataset mean and of each patch's DC level.
/// Returns the removed per-pixel mean.
inline Vec preprocess_inplace(PatchBatch& batch, bool apply_log) {
    Mat& X = batch.data;
    if (apply_log) {
        if ((X.array() < 0).any()) {
            throw Error("preprocess: log transform needs nonnegative intensities");
        }
        X = X.array().log1p().matrix();
    }
    Vec mean = Vec::Zero(X.cols());
    if (X.rows() > 0) {
        mean = X.colwise().mean().transpose();
        X.rowwise() -= mean.transpose();
        const Vec dc = X.rowwise().mean();
        X.colwise() -= dc;
    }
    batch.stage = Stage::Centered;
    return mean;
}

inline PatchBatch preprocess(PatchBatch batch, bool apply_log) {
    preprocess_inplace(batch, apply_log);
    return batch;
}

enum class WhitenMode { PCA, ZCA };

/// Linear whitening with optional dimensionality reduction.
///
/// PCA: forward = L^-1/2 E^T (kept x D). ZCA: forward = E L^-1/2 E^T (D x D,
/// rank = kept), which rotates back to pixel axes. `inverse` is the
/// pseudo-inverse of `forward`.
struct WhiteningTransform {
    Mat forward;
    Mat inverse;
    Vec mean;
    Vec eigenvalues;  ///< kept, descending
    Mat basis;        ///< kept eigenvectors as columns (D x kept)
    WhitenMode mode = WhitenMode::PCA;
    double floor = 1e-10;

    Index input_dim() const { return forward.cols(); }
    Index output_dim() const { return forward.rows(); }
};

inline WhiteningTransform fit_whitener(const Mat& X, Index keep, WhitenMode mode, double rel_floor = 1e-10) {
    const Index n = X.rows();
    const Index d = X.cols();
    if (keep < 1 || keep > std::min<Index>(n - 1, d)) {
        throw Error("fit_whitener: keep_dims must lie in [1, min(count - 1, dim)]");
    }
    WhiteningTransform t;
    t.mode = mode;
    t.floor = rel_floor;
    t.mean = X.colwise().mean().transpose();
    const Mat C = X.rowwise() - t.mean.transpose();
    const Mat cov = (C.transpose() * C) / double(n - 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    if (es.info() != Eigen::Success) {
        throw Error("fit_whitener: eigendecomposition failed");
    }
    const Vec ev = es.eigenvalues().reverse();
    const Mat evec = es.eigenvectors().rowwise().reverse();
    const double top = std::max(ev[0], 0.0);
    if (!(ev[keep - 1] > rel_floor * top)) {
        throw Error("fit_whitener: keep_dims exceeds the numerical rank of the data");
    }
    t.eigenvalues = ev.head(keep);
    t.basis = evec.leftCols(keep);
    const Vec s = t.eigenvalues.cwiseSqrt();
    const Mat pca_fwd = s.cwiseInverse().asDiagonal() * t.basis.transpose();
    const Mat pca_inv = t.basis * s.asDiagonal();
    if (mode == WhitenMode::PCA) {
        t.forward = pca_fwd;
        t.inverse = pca_inv;
    } else {
        t.forward = t.basis * pca_fwd;
        t.inverse = pca_inv * t.basis.transpose();
    }
    return t;
}

inline Mat apply_whitener(const WhiteningTransform& t, const Mat& X) {
    require_dim(X.cols(), t.input_dim(), "apply_whitener");
    return (X.rowwise() - t.mean.transpose()) * t.forward.transpose();
}

inline Mat invert_whitener(const WhiteningTransform& t, const Mat& Y) {
    require_dim(Y.cols(), t.output_dim(), "invert_whitener");
    return (Y * t.inverse.transpose()).rowwise() + t.mean.transpose();
}

/// Rows of J expressed as pixel-space filters: y = J F (x - mean), so the
/// pixel-space filter is F^T J_i.
inline Mat filters_in_pixel_space(const WhiteningTransform& t, const Mat& J) {
    require_dim(J.cols(), t.output_dim(), "filters_in_pixel_space");
    return J * t.forward;
}

/// Basis functions (columns of the pseudo-inverse mixing) for J in pixel space.
inline Mat basis_in_pixel_space(const WhiteningTransform& t, const Mat& J) {
    require_dim(J.cols(), t.output_dim(), "basis_in_pixel_space");
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(J);
    return (t.inverse * cod.pseudoInverse()).transpose();
}

/// Left patch at (r, c), right patch at (r, c + delta) with delta a rounded
/// N(0, shift_std^2) draw clipped to the lateral margin ceil(4 shift_std).
inline PatchBatch make_stereo_pairs(const std::vector<Image>& images, Index size, double shift_std, Index count,
                                    std::uint64_t seed, std::vector<int>* shifts = nullptr) {
    if (shift_std < 0) {
        throw Error("make_stereo_pairs: shift std must be nonnegative");
    }
    const Index margin = static_cast<Index>(std::ceil(4 * shift_std));
    check_corpus(images, size, size + 2 * margin);
    PatchBatch out{Mat(count, 2 * size * size), size, size, 2, Stage::Raw};
    if (shifts) {
        shifts->assign(static_cast<std::size_t>(count), 0);
    }
    parallel_for(count, [&](Index k) {
        Rng rng = make_rng(seed, "stereo-patch", static_cast<std::uint64_t>(k));
        std::uniform_int_distribution<std::size_t> pick_img(0, images.size() - 1);
        const Image& im = images[pick_img(rng)];
        std::uniform_int_distribution<Index> pr(0, im.rows() - size), pc(margin, im.cols() - size - margin);
        const Index r0 = pr(rng), c0 = pc(rng);
        Index delta = 0;
        if (shift_std > 0) {
            std::normal_distribution<double> nd(0.0, shift_std);
            delta = std::clamp<Index>(static_cast<Index>(std::lround(nd(rng))), -margin, margin);
        }
        copy_patch(im, r0, c0, size, out.data.row(k).head(size * size));
        copy_patch(im, r0, c0 + delta, size, out.data.row(k).tail(size * size));
        if (shifts) {
            (*shifts)[static_cast<std::size_t>(k)] = static_cast<int>(delta);
        }
    });
    return out;
}

/// Patch preprocessing for stereo pairs: the per-patch DC is removed per eye.
inline Vec preprocess_stereo_inplace(PatchBatch& batch, bool apply_log) {
    if (batch.eyes != 2) {
        throw Error("preprocess_stereo: expects two-eye batches");
    }
    Mat& X = batch.data;
    if (apply_log) {
        X = X.array().log1p().matrix();
    }
    Vec mean = X.colwise().mean().transpose();
    X.rowwise() -= mean.transpose();
    const Index half = X.cols() / 2;
    for (Index r = 0; r < X.rows(); ++r) {
        X.row(r).head(half).array() -= X.row(r).head(half).mean();
        X.row(r).tail(half).array() -= X.row(r).tail(half).mean();
    }
    batch.stage = Stage::Centered;
    return mean;
}

}  // namespace ebm
