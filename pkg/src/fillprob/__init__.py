"""Fill and mid-price-move probabilities in a state-dependent limit order book."""
