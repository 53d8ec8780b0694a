"""Three-party contract signing with quantum-generated keys.

Modules: ``gf2`` (polynomials over GF(2)), ``otuh`` (one-time hashing
signatures), ``kgp`` (key generation counts), ``cascade``
(reconciliation), ``security`` (finite-key budget), ``charize`` (source
characterisation), ``protocol`` (Merchant/Client/TP state machine),
``pipeline`` and ``report``.
"""

from .gf2 import Gf2Poly, gen_irreducible, is_irreducible
from .otuh import SignatureKeys, SignatureTag, lfsr_hash, sign, verify

__version__ = "0.1.0"

__all__ = ["Gf2Poly", "gen_irreducible", "is_irreducible", "SignatureKeys", "SignatureTag",
           "lfsr_hash", "sign", "verify", "__version__"]
