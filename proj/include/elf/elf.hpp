#pragma once

#include "elf/dataset.hpp"
#include "elf/descriptor.hpp"
#include "elf/detector.hpp"
#include "elf/error.hpp"
#include "elf/eval.hpp"
#include "elf/gradcheck.hpp"
#include "elf/image_io.hpp"
#include "elf/manifest.hpp"
#include "elf/netgraph.hpp"
#include "elf/ops.hpp"
#include "elf/pipeline.hpp"
#include "elf/tensor.hpp"
#include "elf/weights.hpp"
