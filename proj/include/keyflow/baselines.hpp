#pragma once

#include "keyflow/motion.hpp"

namespace keyflow {

// Per-joint SLERP between consecutive anchors; frames outside the anchor span hold the
// nearest anchor. Anchor poses are read from the mask-true rows of `anchors` (length T).
// Anchor rows are copied through unchanged. Throws NoAnchors for an all-false mask.
MotionSequence slerp_inbetween(const KeyframeMask& mask, const MotionSequence& anchors);

}  // namespace keyflow
