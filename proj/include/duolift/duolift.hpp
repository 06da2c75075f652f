// Umbrella header.
#pragma once

#include "duolift/cli.hpp"
#include "duolift/config.hpp"
#include "duolift/core.hpp"
#include "duolift/corpus.hpp"
#include "duolift/discriminator.hpp"
#include "duolift/generator.hpp"
#include "duolift/io.hpp"
#include "duolift/losses.hpp"
#include "duolift/metrics.hpp"
#include "duolift/optimizer.hpp"
#include "duolift/phantom.hpp"
#include "duolift/report.hpp"
#include "duolift/trainer.hpp"
#include "duolift/volume.hpp"
