#include "quadranet/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace quadranet {

void LabeledDataset::validate() const {
    if (inputs.dim(0) < 1) fail("dataset: N must be >= 1");
    if (static_cast<int>(labels.size()) != inputs.dim(0))
        fail("dataset: " + std::to_string(labels.size()) + " labels for " + std::to_string(inputs.dim(0)) +
             " inputs");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= num_classes) fail("dataset: label " + std::to_string(lbl) + " out of range");
}

namespace {
// The axis exclusion is a band, not just the zero lines: coordinates stay at
// least this fraction of `spread` away from either axis. Points arbitrarily
// close to an axis make the mean-squared-error optimum of a product neuron
// misclassify them, so the quadrant clusters are kept separated the way the
// generalized-XOR figures draw them.
constexpr double kXorAxisMargin = 0.3;
}  // namespace

LabeledDataset gen_xor(int n_per_quadrant, double spread, std::uint64_t seed) {
    if (n_per_quadrant < 1) fail("gen_xor: n_per_quadrant must be >= 1");
    if (spread <= 0.0) fail("gen_xor: spread must be > 0");
    Rng rng(seed);
    int n = 4 * n_per_quadrant;
    LabeledDataset ds;
    ds.inputs = Tensor(Shape{n, 2});
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.num_classes = 2;
    // quadrant sign patterns (+,+), (-,+), (-,-), (+,-)
    const double sx[4] = {1, -1, -1, 1};
    const double sy[4] = {1, 1, -1, -1};
    int idx = 0;
    for (int q = 0; q < 4; ++q) {
        for (int i = 0; i < n_per_quadrant; ++i, ++idx) {
            double ux = rng.uniform(kXorAxisMargin, 1.0);
            double uy = rng.uniform(kXorAxisMargin, 1.0);
            double x1 = sx[q] * ux * spread;
            double x2 = sy[q] * uy * spread;
            ds.inputs.at2(idx, 0) = x1;
            ds.inputs.at2(idx, 1) = x2;
            ds.labels[static_cast<std::size_t>(idx)] = (x1 * x2 > 0.0) ? 1 : 0;
        }
    }
    return ds;
}

std::vector<std::array<double, 2>> xor_points(const LabeledDataset& ds) {
    if (ds.inputs.rank() != 2 || ds.inputs.dim(1) != 2) fail("xor_points: expected (N,2) inputs");
    std::vector<std::array<double, 2>> pts(static_cast<std::size_t>(ds.count()));
    for (int i = 0; i < ds.count(); ++i) pts[static_cast<std::size_t>(i)] = {ds.inputs.at2(i, 0), ds.inputs.at2(i, 1)};
    return pts;
}

std::vector<int> xor_pm1_labels(const LabeledDataset& ds) {
    std::vector<int> out(ds.labels.size());
    for (std::size_t i = 0; i < ds.labels.size(); ++i) out[i] = ds.labels[i] == 1 ? 1 : -1;
    return out;
}

LabeledDataset gen_interaction_images(int n, int size, int num_classes, std::uint64_t seed) {
    if (n < 1) fail("gen_interaction_images: n must be >= 1");
    if (size < 8) fail("gen_interaction_images: size must be >= 8");
    if (num_classes != 2 && num_classes != 4) fail("gen_interaction_images: num_classes must be 2 or 4");
    Rng rng(seed);
    LabeledDataset ds;
    ds.inputs = Tensor(Shape{n, 3, size, size});
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.num_classes = num_classes;

    // the labels are decodable only through the product a*b (bit 0) and the
    // relative position of the signed blobs (bit 1); weak amplitudes, varying
    // blob widths and pixel noise keep single-layer readouts near chance
    const double lo = 0.25 * size, hi = 0.75 * size;
    const double min_dx = size / 8.0;
    const double noise = 0.15;

    for (int i = 0; i < n; ++i) {
        double a = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 1.0);
        double b = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 1.0);
        double sigma_a = rng.uniform(size / 12.0, size / 8.0);  // small blob
        double sigma_b = rng.uniform(size / 6.0, size / 4.0);   // large blob
        double ax = 0, ay = 0, bx = 0, by = 0;
        for (int tries = 0; tries < 100; ++tries) {
            ax = rng.uniform(lo, hi);
            ay = rng.uniform(lo, hi);
            bx = rng.uniform(lo, hi);
            by = rng.uniform(lo, hi);
            if (std::fabs(ax - bx) >= min_dx) break;
        }
        if (std::fabs(ax - bx) < min_dx) bx = ax >= (lo + hi) / 2 ? ax - min_dx : ax + min_dx;

        for (int h = 0; h < size; ++h) {
            for (int w = 0; w < size; ++w) {
                double da = ((h - ay) * (h - ay) + (w - ax) * (w - ax)) / (2.0 * sigma_a * sigma_a);
                double db = ((h - by) * (h - by) + (w - bx) * (w - bx)) / (2.0 * sigma_b * sigma_b);
                double va = a * std::exp(-da);
                double vb = b * std::exp(-db);
                ds.inputs.at4(i, 0, h, w) = va + noise * rng.normal();
                ds.inputs.at4(i, 1, h, w) = vb + noise * rng.normal();
                ds.inputs.at4(i, 2, h, w) = va + vb + noise * rng.normal();
            }
        }
        int bit0 = (a * b > 0.0) ? 1 : 0;
        int bit1 = (ax < bx) ? 1 : 0;
        ds.labels[static_cast<std::size_t>(i)] = num_classes == 2 ? bit0 : 2 * bit0 + bit1;
    }
    return ds;
}

LabeledDataset gen_xor_images(int n_per_quadrant, double spread, int size, std::uint64_t seed) {
    LabeledDataset pts = gen_xor(n_per_quadrant, spread, seed);
    int n = pts.count();
    LabeledDataset ds;
    ds.inputs = Tensor(Shape{n, 3, size, size});
    ds.labels = pts.labels;
    ds.num_classes = 2;
    for (int i = 0; i < n; ++i) {
        double x1 = pts.inputs.at2(i, 0) / spread;
        double x2 = pts.inputs.at2(i, 1) / spread;
        for (int h = 0; h < size; ++h)
            for (int w = 0; w < size; ++w) {
                ds.inputs.at4(i, 0, h, w) = x1;
                ds.inputs.at4(i, 1, h, w) = x2;
                ds.inputs.at4(i, 2, h, w) = 0.5 * (x1 + x2);
            }
    }
    return ds;
}

// ---- IDX ----

namespace {

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (in.gcount() != 4)
        fail("idx: '" + path + "' truncated at offset " + std::to_string(offset) + " (expected 4 more bytes)");
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(buf), 4);
}

}  // namespace

LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) fail("idx: cannot open images file '" + images_path + "'");
    std::uint32_t magic = read_u32_be(img, images_path, 0);
    if (magic != 0x00000803)
        fail("idx: bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", magic);
            return std::string(buf);
        }() + " at offset 0 in '" + images_path + "' (expected 0x00000803, u8 rank-3 images)");
    std::uint32_t n = read_u32_be(img, images_path, 4);
    std::uint32_t rows = read_u32_be(img, images_path, 8);
    std::uint32_t cols = read_u32_be(img, images_path, 12);
    if (n < 1 || rows < 1 || cols < 1) fail("idx: empty dimensions in '" + images_path + "'");
    std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (static_cast<std::size_t>(img.gcount()) != pixels)
        fail("idx: '" + images_path + "' truncated: expected " + std::to_string(pixels) + " pixel bytes, got " +
             std::to_string(img.gcount()));

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) fail("idx: cannot open labels file '" + labels_path + "'");
    std::uint32_t lmagic = read_u32_be(lab, labels_path, 0);
    if (lmagic != 0x00000801)
        fail("idx: bad magic in '" + labels_path + "' (expected 0x00000801, u8 rank-1 labels)");
    std::uint32_t ln = read_u32_be(lab, labels_path, 4);
    if (ln != n)
        fail("idx: count mismatch: " + std::to_string(n) + " images in '" + images_path + "' but " +
             std::to_string(ln) + " labels in '" + labels_path + "'");
    std::vector<unsigned char> lraw(ln);
    lab.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(ln));
    if (static_cast<std::size_t>(lab.gcount()) != ln) fail("idx: '" + labels_path + "' truncated label payload");

    LabeledDataset ds;
    ds.inputs = Tensor(Shape{static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
    for (std::size_t i = 0; i < pixels; ++i) ds.inputs[i] = static_cast<double>(raw[i]) / 255.0;
    ds.labels.resize(ln);
    int max_label = 0;
    for (std::uint32_t i = 0; i < ln; ++i) {
        ds.labels[i] = static_cast<int>(lraw[i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = std::max(2, max_label + 1);
    return ds;
}

void write_idx(const LabeledDataset& ds, const std::string& images_path, const std::string& labels_path) {
    if (ds.inputs.rank() != 4 || ds.inputs.dim(1) != 1)
        fail("write_idx: only single-channel (N,1,H,W) datasets are exportable, got " +
             shape_str(ds.inputs.shape()));
    std::ofstream img(images_path, std::ios::binary);
    if (!img) fail("write_idx: cannot open '" + images_path + "' for writing");
    write_u32_be(img, 0x00000803);
    write_u32_be(img, static_cast<std::uint32_t>(ds.inputs.dim(0)));
    write_u32_be(img, static_cast<std::uint32_t>(ds.inputs.dim(2)));
    write_u32_be(img, static_cast<std::uint32_t>(ds.inputs.dim(3)));
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, ds.inputs[i]));
        unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
        img.write(reinterpret_cast<char*>(&byte), 1);
    }

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) fail("write_idx: cannot open '" + labels_path + "' for writing");
    write_u32_be(lab, 0x00000801);
    write_u32_be(lab, static_cast<std::uint32_t>(ds.labels.size()));
    for (int lblv : ds.labels) {
        unsigned char byte = static_cast<unsigned char>(lblv);
        lab.write(reinterpret_cast<char*>(&byte), 1);
    }
}

std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& ds, int val_stride) {
    if (val_stride < 2) fail("split_train_val: val_stride must be >= 2");
    ds.validate();
    int n = ds.count();
    std::vector<int> train_idx, val_idx;
    for (int i = 0; i < n; ++i)
        ((i % val_stride == val_stride - 1) ? val_idx : train_idx).push_back(i);
    auto take = [&](const std::vector<int>& idx, const char* tag) {
        LabeledDataset out;
        Shape shape = ds.inputs.shape();
        shape[0] = static_cast<int>(idx.size());
        out.inputs = Tensor(shape);
        std::size_t row = ds.inputs.size() / static_cast<std::size_t>(n);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const double* src = ds.inputs.data() + static_cast<std::size_t>(idx[r]) * row;
            double* dst = out.inputs.data() + r * row;
            for (std::size_t i = 0; i < row; ++i) dst[i] = src[i];
            out.labels.push_back(ds.labels[static_cast<std::size_t>(idx[r])]);
        }
        out.num_classes = ds.num_classes;
        out.split = tag;
        return out;
    };
    return {take(train_idx, "train"), take(val_idx, "val")};
}

}  // namespace quadranet
