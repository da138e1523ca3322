#pragma once

#include <string>

#include "facedit/tensor.hpp"

namespace facedit {

// Image -> unit-norm embedding (face identity or image-text image tower).
// Implementations that support training also provide the vector-Jacobian
// product of the embedding with respect to the image.
class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    virtual VectorX embed(const Tensor3& image) const = 0;
    virtual int dimension() const = 0;

    virtual bool differentiable() const { return false; }
    // d(<embed(image), upstream>)/d(image).
    virtual Tensor3 embed_vjp(const Tensor3& image, const VectorX& upstream) const;
};

using FaceEmbedder = ImageEmbedder;

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual VectorX embed(const std::string& prompt) const = 0;
    virtual int dimension() const = 0;
};

// Image and text towers mapping into one shared space.
struct ImageTextEmbedder {
    const ImageEmbedder& image;
    const TextEmbedder& text;
};

}  // namespace facedit
