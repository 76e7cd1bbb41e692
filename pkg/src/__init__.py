"""Relaxed RL Study - 緩和制御SDEとランダム化行動の強収束を比較するパッケージ"""  # パッケージの説明

__version__ = "0.1.0"  # バージョン情報
