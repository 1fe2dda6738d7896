"""Channel-adaptive deep joint source-channel coding over land mobile
satellite links: link budget, Loo fading, channel simulation, a numpy
network toolkit, the encoder/decoder model and an experiment harness."""

__version__ = "0.1.0"
