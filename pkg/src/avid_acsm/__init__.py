"""Audio-visual instance discrimination with active contrastive set mining, at desk scale."""
