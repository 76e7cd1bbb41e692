# テストパッケージ
