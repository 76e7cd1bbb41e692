# テスト用の参照データ
