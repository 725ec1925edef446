"""stpad: smart-home traffic metadata attack and padding-defense simulator.

The package models home IoT network traffic as timestamped packet-metadata
traces, implements a passive observer that infers user activity from traffic
rate changes, and provides defenses (stochastic traffic padding, independent
link padding, firewalling, VPN aggregation) together with the analytic and
empirical machinery to measure the adversary-confidence vs. bandwidth-overhead
tradeoff.

Modules:
    trace      trace data model, CSV I/O, rate binning, period segmentation
    generator  trace synthesis from recorded activity segments
    decision   padding decision functions (Bernoulli and hidden-Markov)
    shaping    stochastic traffic padding and the baseline defenses
    adversary  threshold detection, span classification, fingerprinting
    metrics    analytic confidence/overhead formulas and tradeoff sweeps
    cli        command-line front end
"""

__version__ = "0.1.0"
